//! Synthetic distant supervision.
//!
//! A knowledge base of `(subject, relation, object)` tuples is realized as
//! sentences through per-slot templates. Positives instantiate a template of
//! their own slot with the true object. Negatives pair the subject with a
//! distractor of the object's entity type and use a template that does not
//! express the relation. Distant-supervision noise is simulated by positives
//! that contain the true pair but are realized from a non-relation template.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Genre, Label, RelationInstance, Span, Split};
use crate::patterns::{Pattern, PatternSet};
use crate::seed::rng_for;
use crate::Classifier;

pub const SUBJ: &str = "{SUBJ}";
pub const OBJ: &str = "{OBJ}";
/// Template slot for generic sentences that express no relation.
pub const GENERIC: &str = "*";

#[derive(Debug, Error, PartialEq)]
pub enum DistsupError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("slot {0} has no template")]
    NoTemplate(String),
    #[error("no distractor of type {ne_type} for {subject} ({slot})")]
    NoDistractor {
        slot: String,
        subject: String,
        ne_type: NeType,
    },
    #[error("no template expresses something other than {0}")]
    NoNegativeTemplate(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NeType {
    Per,
    Org,
    Loc,
    Date,
    Num,
    Misc,
}

impl NeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NeType::Per => "PER",
            NeType::Org => "ORG",
            NeType::Loc => "LOC",
            NeType::Date => "DATE",
            NeType::Num => "NUM",
            NeType::Misc => "MISC",
        }
    }
}

impl fmt::Display for NeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "PER" => NeType::Per,
            "ORG" => NeType::Org,
            "LOC" => NeType::Loc,
            "DATE" => NeType::Date,
            "NUM" => NeType::Num,
            "MISC" => NeType::Misc,
            _ => return Err(format!("unknown entity type `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KBTuple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub object_type: NeType,
}

fn parse_err(line: usize, message: impl Into<String>) -> DistsupError {
    DistsupError::Parse {
        line,
        message: message.into(),
    }
}

/// `subject<TAB>relation<TAB>object<TAB>type` lines; `#` starts a comment.
pub fn parse_kb(text: &str) -> Result<Vec<KBTuple>, DistsupError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [subject, relation, object, ty] = fields[..] else {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        };
        if [subject, relation, object].iter().any(|f| f.is_empty()) {
            return Err(parse_err(line_no, "empty field"));
        }
        out.push(KBTuple {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
            object_type: ty.parse().map_err(|e: String| parse_err(line_no, e))?,
        });
    }
    Ok(out)
}

pub fn write_kb(kb: &[KBTuple]) -> String {
    kb.iter()
        .map(|t| format!("{}\t{}\t{}\t{}\n", t.subject, t.relation, t.object, t.object_type))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    /// A slot id, or [`GENERIC`].
    pub slot: String,
    pub genre: Genre,
    pub tokens: Vec<String>,
}

impl Template {
    pub fn parse(slot: &str, genre: Genre, text: &str) -> Result<Self, String> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        for p in [SUBJ, OBJ] {
            let n = tokens.iter().filter(|t| *t == p).count();
            if n != 1 {
                return Err(format!("template must contain {p} exactly once, found {n}"));
            }
        }
        Ok(Template {
            slot: slot.to_string(),
            genre,
            tokens,
        })
    }

    pub fn is_generic(&self) -> bool {
        self.slot == GENERIC
    }

    /// Tokens strictly between the two placeholders.
    pub fn middle(&self) -> &[String] {
        let s = self.tokens.iter().position(|t| t == SUBJ).expect("validated");
        let o = self.tokens.iter().position(|t| t == OBJ).expect("validated");
        &self.tokens[s.min(o) + 1..s.max(o)]
    }

    /// Fills in the placeholders; returns tokens and the subject and object
    /// spans.
    pub fn realize(&self, subject: &str, object: &str) -> (Vec<String>, Span, Span) {
        let mut tokens = Vec::new();
        let (mut s, mut o) = (Span::new(0, 0), Span::new(0, 0));
        for t in &self.tokens {
            let (text, span) = match t.as_str() {
                SUBJ => (subject, &mut s),
                OBJ => (object, &mut o),
                _ => {
                    tokens.push(t.clone());
                    continue;
                }
            };
            let start = tokens.len();
            tokens.extend(text.split_whitespace().map(str::to_string));
            *span = Span::new(start, tokens.len());
        }
        (tokens, s, o)
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.slot, self.genre, self.tokens.join(" "))
    }
}

/// `slot<TAB>genre<TAB>template` lines with `{SUBJ}` and `{OBJ}` tokens.
pub fn parse_templates(text: &str) -> Result<Vec<Template>, DistsupError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let [slot, genre, body] = fields[..] else {
            return Err(parse_err(line_no, "expected `slot<TAB>genre<TAB>template`"));
        };
        let genre: Genre = genre
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("unknown genre `{genre}`")))?;
        out.push(Template::parse(slot.trim(), genre, body).map_err(|e| parse_err(line_no, e))?);
    }
    Ok(out)
}

pub fn write_templates(templates: &[Template]) -> String {
    templates.iter().map(|t| t.to_line() + "\n").collect()
}

/// Probability that an instance is news; the rest is web.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenreMix {
    pub news: f64,
}

impl GenreMix {
    /// Genre distribution of the older (train and dev) data.
    pub const DEV_ERA: GenreMix = GenreMix { news: 0.875 };
    /// Genre distribution of the newer evaluation data.
    pub const EVAL_ERA: GenreMix = GenreMix { news: 0.734 };

    pub fn web(self) -> f64 {
        1.0 - self.news
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Negatives per positive.
    pub neg_ratio: usize,
    /// Fraction of training positives realized without the relation.
    pub noise_rate: f64,
    pub dev_era: GenreMix,
    pub eval_era: GenreMix,
    /// Positives per slot, indexed like [`Split::ALL`].
    pub positives: [usize; 3],
    /// Neutral words placed before and after each sentence.
    pub max_context: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            neg_ratio: 4,
            noise_rate: 0.15,
            dev_era: GenreMix::DEV_ERA,
            eval_era: GenreMix::EVAL_ERA,
            positives: [200, 50, 50],
            max_context: 3,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DistsupError> {
        let bad = |m: String| Err(DistsupError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        for mix in [self.dev_era, self.eval_era] {
            if !(0.0..=1.0).contains(&mix.news) {
                return bad(format!("news share {} outside [0, 1]", mix.news));
            }
        }
        Ok(())
    }

    pub fn mix(&self, split: Split) -> GenreMix {
        match split {
            Split::Train | Split::Dev => self.dev_era,
            Split::Eval => self.eval_era,
        }
    }

    pub fn positives(&self, split: Split) -> usize {
        self.positives[split as usize]
    }
}

/// A generated corpus and, per instance, the label the sentence actually
/// deserves.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub instances: Vec<RelationInstance>,
    pub truth: Vec<Label>,
}

impl Generated {
    /// Indices of positives whose sentence does not express the relation.
    pub fn noisy(&self) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&i| self.instances[i].label != self.truth[i])
            .collect()
    }
}

const CONTEXT_WORDS: [&str; 12] = [
    "yesterday",
    "reportedly",
    "sources",
    "confirmed",
    "today",
    "officials",
    "noted",
    "meanwhile",
    "however",
    "recently",
    "statement",
    "update",
];

struct Realizer<'a> {
    own: BTreeMap<Genre, Vec<&'a Template>>,
    /// Templates of other slots and generic ones.
    other: BTreeMap<Genre, Vec<&'a Template>>,
}

impl<'a> Realizer<'a> {
    fn new(slot: &str, templates: &'a [Template]) -> Result<Self, DistsupError> {
        let mut own: BTreeMap<Genre, Vec<&Template>> = BTreeMap::new();
        let mut other: BTreeMap<Genre, Vec<&Template>> = BTreeMap::new();
        for t in templates {
            let map = if t.slot == slot { &mut own } else { &mut other };
            map.entry(t.genre.coarse()).or_default().push(t);
        }
        if own.is_empty() {
            return Err(DistsupError::NoTemplate(slot.to_string()));
        }
        if other.is_empty() {
            return Err(DistsupError::NoNegativeTemplate(slot.to_string()));
        }
        Ok(Realizer { own, other })
    }

    /// A template of `genre` if there is one, of any genre otherwise.
    fn pick(map: &BTreeMap<Genre, Vec<&'a Template>>, genre: Genre, rng: &mut ChaCha8Rng) -> &'a Template {
        let pool = map.get(&genre).unwrap_or_else(|| map.values().next().expect("non-empty"));
        pool.choose(rng).expect("non-empty")
    }
}

/// Realizes `kb` into a labelled corpus, one stream of randomness per slot
/// and split. The same KB, templates and config always give the same corpus.
pub fn generate_corpus(
    kb: &[KBTuple],
    templates: &[Template],
    config: &GeneratorConfig,
) -> Result<Generated, DistsupError> {
    config.validate()?;
    let mut by_slot: BTreeMap<&str, Vec<&KBTuple>> = BTreeMap::new();
    for t in kb {
        by_slot.entry(&t.relation).or_default().push(t);
    }
    // a slot without its own template is the most likely user error; report
    // it before anything else can fail
    if let Some(&slot) = by_slot.keys().find(|&&s| !templates.iter().any(|t| t.slot == s)) {
        return Err(DistsupError::NoTemplate(slot.to_string()));
    }
    let mut pools: BTreeMap<NeType, BTreeSet<&str>> = BTreeMap::new();
    for t in kb {
        pools.entry(t.object_type).or_default().insert(&t.object);
    }
    let mut gold: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for t in kb {
        gold.entry((&t.relation, &t.subject)).or_default().insert(&t.object);
    }

    let mut out = Generated {
        instances: Vec::new(),
        truth: Vec::new(),
    };
    for (&slot, tuples) in &by_slot {
        let realizer = Realizer::new(slot, templates)?;
        for split in Split::ALL {
            let mut rng = rng_for(config.seed, &format!("distsup/{slot}/{split}"));
            let n_pos = config.positives(split);
            let n_noisy = if split == Split::Train {
                (config.noise_rate * n_pos as f64).round() as usize
            } else {
                0
            };
            let mut noisy = vec![false; n_pos];
            noisy[..n_noisy].fill(true);
            noisy.shuffle(&mut rng);
            let mix = config.mix(split);
            let draw_genre = |rng: &mut ChaCha8Rng| {
                if rng.gen_bool(mix.news) {
                    Genre::News
                } else {
                    Genre::Web
                }
            };
            let mut emit = |tokens_subj_obj: (Vec<String>, Span, Span), genre, label, truth, rng: &mut ChaCha8Rng| {
                let (core, s, o) = tokens_subj_obj;
                let left = rng.gen_range(0..=config.max_context);
                let right = rng.gen_range(0..=config.max_context);
                let mut tokens: Vec<String> = (0..left)
                    .map(|_| CONTEXT_WORDS.choose(rng).expect("non-empty").to_string())
                    .collect();
                tokens.extend(core);
                tokens.extend((0..right).map(|_| CONTEXT_WORDS.choose(rng).expect("non-empty").to_string()));
                let shift = |sp: Span| Span::new(sp.start + left, sp.end + left);
                let inst = RelationInstance::new(slot, label, genre, split, tokens, shift(s), shift(o))
                    .expect("templates place each mention once");
                out.instances.push(inst);
                out.truth.push(truth);
            };

            for &is_noisy in &noisy {
                let tuple = tuples.choose(&mut rng).expect("non-empty slot");
                let genre = draw_genre(&mut rng);
                let map = if is_noisy { &realizer.other } else { &realizer.own };
                let template = Realizer::pick(map, genre, &mut rng);
                let sentence = template.realize(&tuple.subject, &tuple.object);
                let truth = Label::from_bool(!is_noisy);
                emit(sentence, genre, Label::Positive, truth, &mut rng);
            }
            for _ in 0..n_pos * config.neg_ratio {
                let tuple = tuples.choose(&mut rng).expect("non-empty slot");
                let banned = &gold[&(slot, tuple.subject.as_str())];
                let candidates: Vec<&str> = pools[&tuple.object_type]
                    .iter()
                    .copied()
                    .filter(|o| !banned.contains(o) && *o != tuple.subject)
                    .collect();
                let distractor = *candidates.choose(&mut rng).ok_or_else(|| DistsupError::NoDistractor {
                    slot: slot.to_string(),
                    subject: tuple.subject.clone(),
                    ne_type: tuple.object_type,
                })?;
                let genre = draw_genre(&mut rng);
                let template = Realizer::pick(&realizer.other, genre, &mut rng);
                let sentence = template.realize(&tuple.subject, distractor);
                emit(sentence, genre, Label::Negative, Label::Negative, &mut rng);
            }
        }
    }
    Ok(out)
}

/// One pattern per slot template: its text between the two placeholders.
pub fn trigger_patterns(templates: &[Template]) -> PatternSet {
    let mut set = PatternSet::new();
    for t in templates.iter().filter(|t| !t.is_generic()) {
        let middle = t.middle().join(" ");
        if let Ok(p) = Pattern::parse(&t.slot, &middle) {
            set.insert(p);
        }
    }
    set
}

/// Keeps exactly the instances whose thresholded prediction agrees with
/// their (distant) label, in order.
pub fn self_train_filter<C: Classifier + ?Sized>(
    instances: &[RelationInstance],
    clean: &C,
) -> Vec<RelationInstance> {
    instances
        .iter()
        .filter(|i| clean.score(i).is_positive() == i.label.is_positive())
        .cloned()
        .collect()
}

/// Iterated self-training: the noisy set is cut into `n_chunks` contiguous
/// chunks; iteration `t` trains a model on `seed_data` plus everything
/// accepted so far and filters chunk `t mod n_chunks`. Chunks never visited
/// are kept unfiltered.
pub fn self_train_chunked<C, F>(
    noisy: &[RelationInstance],
    seed_data: &[RelationInstance],
    n_chunks: usize,
    n_iterations: usize,
    mut train: F,
) -> Vec<RelationInstance>
where
    C: Classifier,
    F: FnMut(&[RelationInstance]) -> C,
{
    let n_chunks = n_chunks.clamp(1, noisy.len().max(1));
    let size = noisy.len().div_ceil(n_chunks).max(1);
    let mut chunks: Vec<Vec<RelationInstance>> = noisy.chunks(size).map(<[_]>::to_vec).collect();
    let mut visited = vec![false; chunks.len()];
    for t in 0..n_iterations {
        if chunks.is_empty() {
            break;
        }
        let c = t % chunks.len();
        let mut data = seed_data.to_vec();
        data.extend(
            chunks
                .iter()
                .zip(&visited)
                .filter(|(_, &v)| v)
                .flat_map(|(ch, _)| ch.iter().cloned()),
        );
        let model = train(&data);
        chunks[c] = self_train_filter(&chunks[c], &model);
        visited[c] = true;
    }
    chunks.concat()
}

const LOCATION_PREFIXES: [&str; 6] = [
    "city_of_",
    "cities_of_",
    "stateorprovince_of_",
    "statesorprovinces_of_",
    "country_of_",
    "countries_of_",
];

/// `per:city_of_birth` → `per:location_of_birth`, and likewise for the
/// state-or-province and country variants; other slots are unchanged.
pub fn merge_location_slot(slot: &str) -> String {
    if let Some((kind, rel)) = slot.split_once(':') {
        for p in LOCATION_PREFIXES {
            if let Some(rest) = rel.strip_prefix(p) {
                return format!("{kind}:location_of_{rest}");
            }
        }
    }
    slot.to_string()
}

pub fn merge_location_slots(instances: &[RelationInstance]) -> Vec<RelationInstance> {
    instances
        .iter()
        .map(|i| RelationInstance {
            slot: merge_location_slot(&i.slot),
            ..i.clone()
        })
        .collect()
}

/// Demo slots with their object types.
pub const DEMO_SLOTS: [(&str, NeType); 6] = [
    ("org:founded_by", NeType::Per),
    ("org:number_of_employees_members", NeType::Num),
    ("per:city_of_birth", NeType::Loc),
    ("per:date_of_birth", NeType::Date),
    ("per:employee_or_member_of", NeType::Org),
    ("per:spouse", NeType::Per),
];

/// Templates for [`DEMO_SLOTS`]. News and web use disjoint trigger
/// vocabularies; web templates imitate informal register.
pub const DEMO_TEMPLATES: &str = "\
org:founded_by\tnews\t{SUBJ} was founded by {OBJ}
org:founded_by\tnews\t{OBJ} , the founder of {SUBJ} ,
org:founded_by\tweb\t{OBJ} started {SUBJ} back then
org:founded_by\tweb\t{SUBJ} iz the brainchild of {OBJ}
org:number_of_employees_members\tnews\t{SUBJ} employs {OBJ} people
org:number_of_employees_members\tnews\t{SUBJ} has a workforce of {OBJ}
org:number_of_employees_members\tweb\t{SUBJ} got like {OBJ} ppl workin there
org:number_of_employees_members\tweb\t{OBJ} folks work at {SUBJ}
per:city_of_birth\tnews\t{SUBJ} is a native of {OBJ}
per:city_of_birth\tnews\t{OBJ} native {SUBJ} returned
per:city_of_birth\tweb\t{SUBJ} grew up down in {OBJ}
per:city_of_birth\tweb\t{SUBJ} hails from {OBJ}
per:date_of_birth\tnews\t{SUBJ} was born on {OBJ}
per:date_of_birth\tnews\t{SUBJ} , whose birth date is {OBJ} ,
per:date_of_birth\tweb\t{SUBJ} bday iz {OBJ} !!
per:date_of_birth\tweb\t{SUBJ} popped out {OBJ} lol
per:employee_or_member_of\tnews\t{SUBJ} , a spokesman for {OBJ} ,
per:employee_or_member_of\tnews\t{SUBJ} joined {OBJ} as an executive
per:employee_or_member_of\tweb\t{SUBJ} works @ {OBJ}
per:employee_or_member_of\tweb\t{SUBJ} is on the payroll at {OBJ}
per:spouse\tnews\t{SUBJ} married {OBJ}
per:spouse\tnews\t{SUBJ} and his wife {OBJ}
per:spouse\tweb\t{SUBJ} n her hubby {OBJ}
per:spouse\tweb\t{SUBJ} tied the knot w/ {OBJ}
*\tnews\t{SUBJ} said {OBJ} was not involved
*\tnews\t{SUBJ} visited {OBJ} last week
*\tnews\t{OBJ} was mentioned in a report about {SUBJ}
*\tweb\t{SUBJ} and {OBJ} smh
*\tweb\tsaw {SUBJ} w {OBJ} at the mall
*\tweb\t{OBJ} ??? {SUBJ} idk
";

pub fn demo_templates() -> Vec<Template> {
    parse_templates(DEMO_TEMPLATES).expect("built-in templates are valid")
}

const FIRST: [&str; 16] = [
    "Anna", "Boris", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Keiko", "Luis",
    "Mira", "Nils", "Olga", "Pavel",
];
const LAST: [&str; 16] = [
    "Abbott", "Brandt", "Castro", "Dahl", "Eklund", "Fischer", "Gomez", "Haas", "Ivanova", "Jansen", "Kowalski",
    "Lindqvist", "Moreau", "Novak", "Ortega", "Petrov",
];
const ORG_STEM: [&str; 12] = [
    "Acme", "Borealis", "Cobalt", "Dynamo", "Evergreen", "Falcon", "Granite", "Helix", "Ironwood", "Juniper",
    "Keystone", "Lumen",
];
const ORG_SUFFIX: [&str; 4] = ["Corp", "Group", "Systems", "Holdings"];
const CITIES: [&str; 16] = [
    "Aberdeen", "Bergen", "Cordoba", "Dresden", "Eindhoven", "Faro", "Graz", "Haifa", "Izmir", "Jena", "Kaunas",
    "Leipzig", "Malmo", "Nantes", "Oulu", "Porto",
];
const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

/// Largest `per_slot` [`demo_kb`] accepts: the number of distinct
/// organization names.
pub const DEMO_MAX_PER_SLOT: usize = ORG_STEM.len() * ORG_SUFFIX.len();

/// A seeded knowledge base with `per_slot` tuples for each of the
/// [`DEMO_SLOTS`], each with a distinct subject.
///
/// # Panics
/// If `per_slot` exceeds [`DEMO_MAX_PER_SLOT`].
pub fn demo_kb(per_slot: usize, seed: u64) -> Vec<KBTuple> {
    assert!(per_slot <= DEMO_MAX_PER_SLOT, "demo KB has at most {DEMO_MAX_PER_SLOT} subjects per slot");
    let mut rng = rng_for(seed, "demo-kb");
    let person = |rng: &mut ChaCha8Rng| {
        format!("{} {}", FIRST.choose(rng).expect("non-empty"), LAST.choose(rng).expect("non-empty"))
    };
    let org = |rng: &mut ChaCha8Rng| {
        format!("{} {}", ORG_STEM.choose(rng).expect("non-empty"), ORG_SUFFIX.choose(rng).expect("non-empty"))
    };
    let mut kb = Vec::new();
    for (slot, ty) in DEMO_SLOTS {
        let mut subjects = BTreeSet::new();
        while subjects.len() < per_slot {
            let s = if slot.starts_with("org:") { org(&mut rng) } else { person(&mut rng) };
            subjects.insert(s);
        }
        let mut subjects: Vec<String> = subjects.into_iter().collect();
        subjects.shuffle(&mut rng);
        for subject in subjects {
            let object = match ty {
                NeType::Per => loop {
                    let p = person(&mut rng);
                    if p != subject {
                        break p;
                    }
                },
                NeType::Org => org(&mut rng),
                NeType::Loc => CITIES.choose(&mut rng).expect("non-empty").to_string(),
                NeType::Date => format!(
                    "{} {} , {}",
                    MONTHS.choose(&mut rng).expect("non-empty"),
                    rng.gen_range(1..=28),
                    rng.gen_range(1940..=1999)
                ),
                NeType::Num => format!("{}", rng.gen_range(2..=500) * 10),
                NeType::Misc => format!("item{}", rng.gen_range(0..1000)),
            };
            kb.push(KBTuple {
                subject,
                relation: slot.to_string(),
                object,
                object_type: ty,
            });
        }
    }
    kb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ModelScore;
    use proptest::prelude::*;

    fn small_config(noise_rate: f64) -> GeneratorConfig {
        GeneratorConfig {
            positives: [40, 10, 10],
            noise_rate,
            seed: 4,
            ..Default::default()
        }
    }

    fn corpus(noise_rate: f64) -> Generated {
        generate_corpus(&demo_kb(30, 1), &demo_templates(), &small_config(noise_rate)).unwrap()
    }

    #[test]
    fn kb_and_templates_round_trip() {
        let kb = demo_kb(5, 2);
        assert_eq!(kb.len(), 30);
        assert_eq!(parse_kb(&write_kb(&kb)).unwrap(), kb);
        let t = demo_templates();
        assert_eq!(parse_templates(&write_templates(&t)).unwrap(), t);
        assert!(matches!(parse_kb("a\tb\tc\tPLANET"), Err(DistsupError::Parse { line: 1, .. })));
        assert!(parse_templates("s\tnews\t{SUBJ} alone").is_err());
    }

    #[test]
    fn ratio_and_counts() {
        let g = corpus(0.0);
        for (slot, _) in DEMO_SLOTS {
            for split in Split::ALL {
                let of: Vec<&RelationInstance> =
                    g.instances.iter().filter(|i| i.slot == slot && i.split == split).collect();
                let pos = of.iter().filter(|i| i.label.is_positive()).count();
                assert_eq!(pos, small_config(0.0).positives(split));
                assert_eq!(of.len() - pos, 4 * pos);
            }
        }
    }

    #[test]
    fn clean_positives_instantiate_their_slot() {
        let g = corpus(0.0);
        let patterns = trigger_patterns(&demo_templates());
        assert!(g.noisy().is_empty());
        for inst in &g.instances {
            assert_eq!(patterns.classify(inst).is_positive(), inst.label.is_positive(), "{}", inst.to_line());
        }
    }

    #[test]
    fn negatives_never_hold_the_gold_object() {
        let kb = demo_kb(30, 1);
        let g = generate_corpus(&kb, &demo_templates(), &small_config(0.2)).unwrap();
        let gold: BTreeSet<(&str, &str, &str)> =
            kb.iter().map(|t| (t.relation.as_str(), t.subject.as_str(), t.object.as_str())).collect();
        for inst in g.instances.iter().filter(|i| !i.label.is_positive()) {
            assert!(!gold.contains(&(inst.slot.as_str(), inst.name_surface.as_str(), inst.filler_surface.as_str())));
        }
        // a date negative still carries a (wrong) date
        let date = g
            .instances
            .iter()
            .find(|i| i.slot == "per:date_of_birth" && !i.label.is_positive())
            .unwrap();
        assert!(MONTHS.iter().any(|m| date.filler_surface.starts_with(m)));
    }

    #[test]
    fn noise_only_in_training_positives() {
        let g = corpus(0.25);
        let noisy = g.noisy();
        assert_eq!(noisy.len(), 6 * 10);
        for i in noisy {
            let inst = &g.instances[i];
            assert_eq!(inst.split, Split::Train);
            assert!(inst.label.is_positive());
            assert_eq!(g.truth[i], Label::Negative);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = corpus(0.15);
        let b = corpus(0.15);
        assert_eq!(a, b);
        let other = generate_corpus(&demo_kb(30, 1), &demo_templates(), &GeneratorConfig { seed: 5, ..small_config(0.15) }).unwrap();
        assert_ne!(a.instances, other.instances);
    }

    #[test]
    fn genre_shares_follow_the_mix() {
        let cfg = GeneratorConfig { positives: [400, 10, 400], ..small_config(0.0) };
        let g = generate_corpus(&demo_kb(30, 1), &demo_templates(), &cfg).unwrap();
        for (split, expected) in [(Split::Train, 0.875), (Split::Eval, 0.734)] {
            let of: Vec<_> = g.instances.iter().filter(|i| i.split == split).collect();
            let news = of.iter().filter(|i| i.genre == Genre::News).count() as f64 / of.len() as f64;
            assert!((news - expected).abs() < 0.02, "{split}: {news}");
        }
    }

    #[test]
    fn generator_errors() {
        let kb = vec![KBTuple { subject: "A".into(), relation: "per:title".into(), object: "boss".into(), object_type: NeType::Misc }];
        assert_eq!(
            generate_corpus(&kb, &demo_templates(), &small_config(0.0)).unwrap_err(),
            DistsupError::NoTemplate("per:title".into())
        );
        let lone = parse_templates("per:title\tnews\t{SUBJ} is the {OBJ}\n*\tnews\t{SUBJ} and {OBJ}").unwrap();
        assert!(matches!(generate_corpus(&kb, &lone, &small_config(0.0)), Err(DistsupError::NoDistractor { .. })));
        let bad = GeneratorConfig { noise_rate: 1.5, ..Default::default() };
        assert!(matches!(generate_corpus(&kb, &lone, &bad), Err(DistsupError::InvalidConfig(_))));
    }

    #[test]
    fn filter_trivial_cases() {
        let g = corpus(0.0);
        let agree = |i: &RelationInstance| ModelScore::from_bool(i.label.is_positive());
        let disagree = |i: &RelationInstance| ModelScore::from_bool(!i.label.is_positive());
        assert_eq!(self_train_filter(&g.instances, &agree), g.instances);
        assert!(self_train_filter(&g.instances, &disagree).is_empty());
    }

    proptest! {
        #[test]
        fn filter_matches_itemwise_oracle(votes in proptest::collection::vec(any::<bool>(), 1..120)) {
            let g = corpus(0.0);
            let data: Vec<RelationInstance> = g.instances.iter().take(votes.len()).cloned().collect();
            let lines: BTreeMap<String, bool> =
                data.iter().zip(&votes).map(|(i, &v)| (i.to_line(), v)).collect();
            let model = |i: &RelationInstance| ModelScore::from_bool(lines[&i.to_line()]);
            let kept = self_train_filter(&data, &model);
            let expected: Vec<RelationInstance> = data
                .iter()
                .filter(|i| lines[&i.to_line()] == i.label.is_positive())
                .cloned()
                .collect();
            prop_assert_eq!(&kept, &expected);
            prop_assert_eq!(self_train_filter(&kept, &model), kept);
        }
    }

    #[test]
    fn chunked_filter_uses_every_chunk() {
        let g = corpus(0.3);
        let train: Vec<RelationInstance> = g.instances.iter().filter(|i| i.split == Split::Train).cloned().collect();
        let patterns = trigger_patterns(&demo_templates());
        let mut calls = Vec::new();
        let kept = self_train_chunked(&train, &[], 4, 4, |data| {
            calls.push(data.len());
            patterns.clone()
        });
        assert_eq!(calls.len(), 4);
        assert!(calls.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(kept, self_train_filter(&train, &patterns));
        // zero iterations leave the data untouched
        assert_eq!(self_train_chunked(&train, &[], 4, 0, |_| patterns.clone()), train);
    }

    #[test]
    fn location_merge() {
        assert_eq!(merge_location_slot("per:city_of_birth"), "per:location_of_birth");
        assert_eq!(merge_location_slot("per:countries_of_residence"), "per:location_of_residence");
        assert_eq!(merge_location_slot("org:stateorprovince_of_headquarters"), "org:location_of_headquarters");
        assert_eq!(merge_location_slot("per:title"), "per:title");
        let g = corpus(0.0);
        let once = merge_location_slots(&g.instances);
        assert_eq!(merge_location_slots(&once), once);
        assert!(once.iter().all(|i| i.slot != "per:city_of_birth"));
    }
}
