//! Sparse features for the SVM family.
//!
//! The bag-of-words representation is an order flag plus four bags: left,
//! middle and right context and the whole sentence. The skip representation
//! adds skip n-grams (n = 3, 4, 5) over the sentence with the mentions
//! replaced by `<NAME>` and `<FILLER>`.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::RelationInstance;

pub const NAME_PLACEHOLDER: &str = "<NAME>";
pub const FILLER_PLACEHOLDER: &str = "<FILLER>";
pub const SKIP_ORDERS: [usize; 3] = [3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Bow,
    Skip,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Bow => "bow",
            FeatureKind::Skip => "skip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bow" => Some(FeatureKind::Bow),
            "skip" => Some(FeatureKind::Skip),
            _ => None,
        }
    }
}

/// How raw counts become feature values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    Counts,
    Binary,
    #[default]
    L2Counts,
}

impl Weighting {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "counts" => Some(Weighting::Counts),
            "binary" => Some(Weighting::Binary),
            "l2-counts" => Some(Weighting::L2Counts),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Counts => "counts",
            Weighting::Binary => "binary",
            Weighting::L2Counts => "l2-counts",
        }
    }
}

/// Index-sorted sparse vector without stored zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_insert(0.0) += v;
        }
        SparseVector {
            entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| dense.get(i).copied().unwrap_or(0.0) * v)
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        if factor == 0.0 {
            self.entries.clear();
        } else {
            for e in &mut self.entries {
                e.1 *= factor;
            }
        }
    }

    fn apply(&mut self, weighting: Weighting) {
        match weighting {
            Weighting::Counts => {}
            Weighting::Binary => self.entries.iter_mut().for_each(|e| e.1 = 1.0),
            Weighting::L2Counts => {
                let n = self.squared_norm().sqrt();
                if n > 0.0 {
                    self.scale(1.0 / n);
                }
            }
        }
    }
}

/// Feature-string to index map. Growing only while unfrozen.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSpace {
    index: HashMap<String, usize>,
    names: Vec<String>,
    frozen: bool,
}

impl FeatureSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds and freezes a space over every feature the instances produce.
    pub fn fit<'a>(kind: FeatureKind, instances: impl IntoIterator<Item = &'a RelationInstance>) -> Self {
        let mut space = Self::new();
        for inst in instances {
            for f in feature_strings(kind, inst) {
                space.intern(&f);
            }
        }
        space.freeze();
        space
    }

    /// Index for `feature`, adding it unless the space is frozen.
    pub fn intern(&mut self, feature: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(feature) {
            return Some(i);
        }
        if self.frozen {
            return None;
        }
        let i = self.names.len();
        self.names.push(feature.to_string());
        self.index.insert(feature.to_string(), i);
        Some(i)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Counts known features; unknown ones are dropped.
    pub fn vectorize<S: AsRef<str>>(&self, features: &[S], weighting: Weighting) -> SparseVector {
        let mut v = SparseVector::from_pairs(
            features
                .iter()
                .filter_map(|f| self.get(f.as_ref()))
                .map(|i| (i, 1.0)),
        );
        v.apply(weighting);
        v
    }

    /// `index<TAB>feature` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(&format!("{i}\t{n}\n"));
        }
        out
    }

    /// Reads a dump back; the result is frozen.
    pub fn from_dump(text: &str) -> Result<Self, String> {
        let mut space = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (idx, name) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected `index<TAB>feature`", lineno + 1))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| format!("line {}: bad index `{idx}`", lineno + 1))?;
            if idx != space.len() {
                return Err(format!("line {}: index {idx} out of order", lineno + 1));
            }
            space.intern(name);
        }
        space.freeze();
        Ok(space)
    }
}

/// Skip n-grams: for each window of `n` tokens, the first and last token
/// joined by a space.
pub fn skip_ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<String> {
    assert!(n >= 3, "skip n-grams need n >= 3");
    tokens
        .windows(n)
        .map(|w| format!("{} {}", w[0].as_ref(), w[n - 1].as_ref()))
        .collect()
}

pub fn bow_feature_strings(instance: &RelationInstance) -> Vec<String> {
    let ctx = instance.split_contexts();
    let mut out = Vec::with_capacity(instance.tokens.len() * 2 + 1);
    out.push(format!("flag:{}", ctx.order.as_str()));
    for (prefix, region) in [("left", ctx.left), ("mid", ctx.middle), ("right", ctx.right)] {
        out.extend(region.iter().map(|t| format!("{prefix}:{t}")));
    }
    out.extend(instance.tokens.iter().map(|t| format!("all:{t}")));
    out
}

/// Sentence tokens with each mention collapsed to its placeholder.
pub fn placeholder_tokens(instance: &RelationInstance) -> Vec<&str> {
    let mut out = Vec::with_capacity(instance.tokens.len());
    let mut i = 0;
    while i < instance.tokens.len() {
        if i == instance.name_span.start {
            out.push(NAME_PLACEHOLDER);
            i = instance.name_span.end;
        } else if i == instance.filler_span.start {
            out.push(FILLER_PLACEHOLDER);
            i = instance.filler_span.end;
        } else {
            out.push(instance.tokens[i].as_str());
            i += 1;
        }
    }
    out
}

pub fn skip_feature_strings(instance: &RelationInstance) -> Vec<String> {
    let mut out = bow_feature_strings(instance);
    let seq = placeholder_tokens(instance);
    for n in SKIP_ORDERS {
        out.extend(skip_ngrams(&seq, n).into_iter().map(|g| format!("skip{n}:{g}")));
    }
    out
}

pub fn feature_strings(kind: FeatureKind, instance: &RelationInstance) -> Vec<String> {
    match kind {
        FeatureKind::Bow => bow_feature_strings(instance),
        FeatureKind::Skip => skip_feature_strings(instance),
    }
}

pub fn bow_features(instance: &RelationInstance, space: &FeatureSpace, weighting: Weighting) -> SparseVector {
    space.vectorize(&bow_feature_strings(instance), weighting)
}

pub fn skip_feature_vector(instance: &RelationInstance, space: &FeatureSpace, weighting: Weighting) -> SparseVector {
    space.vectorize(&skip_feature_strings(instance), weighting)
}

pub fn featurize(
    kind: FeatureKind,
    instance: &RelationInstance,
    space: &FeatureSpace,
    weighting: Weighting,
) -> SparseVector {
    space.vectorize(&feature_strings(kind, instance), weighting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Genre, Label, Span, Split};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn inst(tokens: &str, name: Span, filler: Span) -> RelationInstance {
        RelationInstance::new("org:founded_by", Label::Positive, Genre::News, Split::Train, toks(tokens), name, filler)
            .unwrap()
    }

    #[test]
    fn skip_ngram_examples() {
        let t = toks(", founder and director of");
        assert_eq!(skip_ngrams(&t, 4), vec![", director", "founder of"]);
        assert_eq!(skip_ngrams(&toks("a b c"), 3), vec!["a c"]);
        assert!(skip_ngrams(&toks("a b"), 3).is_empty());
    }

    #[test]
    fn bow_example() {
        let i = inst("Steve Jobs founded Apple in 1976", Span::new(0, 2), Span::new(3, 4));
        let f: HashSet<String> = bow_feature_strings(&i).into_iter().collect();
        for want in ["flag:name-first", "mid:founded", "right:in", "right:1976", "all:Steve", "all:Apple", "all:1976"] {
            assert!(f.contains(want), "missing {want}");
        }
        assert!(!f.iter().any(|x| x.starts_with("left:")));
        assert!(!f.contains("mid:Apple"));
    }

    #[test]
    fn bow_counts() {
        let i = inst("A of of B", Span::new(0, 1), Span::new(3, 4));
        let space = FeatureSpace::fit(FeatureKind::Bow, [&i]);
        let v = bow_features(&i, &space, Weighting::Counts);
        assert_eq!(v.get(space.get("mid:of").unwrap()), 2.0);
        assert_eq!(v.get(space.get("all:of").unwrap()), 2.0);
    }

    #[test]
    fn mentions_only() {
        let i = inst("A B", Span::new(0, 1), Span::new(1, 2));
        let f = bow_feature_strings(&i);
        assert_eq!(f, vec!["flag:name-first", "all:A", "all:B"]);
        assert!(skip_feature_strings(&i).iter().all(|x| !x.starts_with("skip")));
    }

    #[test]
    fn skip_features_bridge_placeholders() {
        let i = inst("Y , founder and director of X", Span::new(6, 7), Span::new(0, 1));
        let f = skip_feature_strings(&i);
        assert_eq!(
            placeholder_tokens(&i),
            vec!["<FILLER>", ",", "founder", "and", "director", "of", "<NAME>"]
        );
        let expected: Vec<String> = skip_ngrams(&placeholder_tokens(&i), 4)
            .into_iter()
            .map(|g| format!("skip4:{g}"))
            .collect();
        assert!(expected.contains(&"skip4:founder of".to_string()));
        for e in &expected {
            assert!(f.contains(e));
        }
    }

    #[test]
    fn multi_token_mentions_collapse() {
        let i = inst("John Doe met Jane Roe", Span::new(0, 2), Span::new(3, 5));
        assert_eq!(placeholder_tokens(&i), vec!["<NAME>", "met", "<FILLER>"]);
        assert!(skip_feature_strings(&i).contains(&"skip3:<NAME> <FILLER>".to_string()));
    }

    #[test]
    fn frozen_space_drops_unseen() {
        let a = inst("A founded B", Span::new(0, 1), Span::new(2, 3));
        let b = inst("A married B", Span::new(0, 1), Span::new(2, 3));
        let mut space = FeatureSpace::fit(FeatureKind::Bow, [&a]);
        assert!(space.is_frozen());
        let n = space.len();
        assert_eq!(space.intern("mid:married"), None);
        assert_eq!(space.len(), n);
        let v = bow_features(&b, &space, Weighting::Counts);
        assert!(v.entries().iter().all(|&(i, _)| !space.name(i).unwrap().contains("married")));
        assert_eq!(v.nnz(), 3);
    }

    #[test]
    fn weighting_modes() {
        let i = inst("A of of B", Span::new(0, 1), Span::new(3, 4));
        let space = FeatureSpace::fit(FeatureKind::Bow, [&i]);
        let v = bow_features(&i, &space, Weighting::L2Counts);
        assert!((v.squared_norm() - 1.0).abs() < 1e-12);
        let b = bow_features(&i, &space, Weighting::Binary);
        assert!(b.entries().iter().all(|&(_, x)| x == 1.0));
    }

    #[test]
    fn dump_roundtrip() {
        let i = inst("A founded B", Span::new(0, 1), Span::new(2, 3));
        let space = FeatureSpace::fit(FeatureKind::Skip, [&i]);
        let back = FeatureSpace::from_dump(&space.dump()).unwrap();
        assert_eq!(back, space);
    }

    fn arb_instance() -> impl Strategy<Value = RelationInstance> {
        (proptest::collection::vec("[a-d]", 2..12), any::<prop::sample::Index>(), any::<prop::sample::Index>())
            .prop_filter_map("distinct positions", |(t, a, b)| {
                let (a, b) = (a.index(t.len()), b.index(t.len()));
                (a != b).then(|| {
                    RelationInstance::new("s", Label::Negative, Genre::Web, Split::Dev, t, Span::new(a, a + 1), Span::new(b, b + 1))
                        .unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn skip_count_law(t in proptest::collection::vec("[a-z]{1,3}", 0..30), n in 3usize..7) {
            let brute: Vec<String> = (0..t.len())
                .filter(|&s| s + n <= t.len())
                .map(|s| format!("{} {}", t[s], t[s + n - 1]))
                .collect();
            let got = skip_ngrams(&t, n);
            prop_assert_eq!(got.len(), t.len().saturating_sub(n - 1));
            prop_assert_eq!(got, brute);
        }

        #[test]
        fn bow_is_subset_of_skip(i in arb_instance()) {
            let bow = bow_feature_strings(&i);
            let skip: Vec<String> = skip_feature_strings(&i).into_iter().filter(|f| !f.starts_with("skip")).collect();
            prop_assert_eq!(bow, skip);
        }

        #[test]
        fn fitted_space_loses_nothing(insts in proptest::collection::vec(arb_instance(), 1..5)) {
            let space = FeatureSpace::fit(FeatureKind::Skip, &insts);
            for i in &insts {
                let fs = skip_feature_strings(i);
                let v = space.vectorize(&fs, Weighting::Counts);
                let total: f64 = v.entries().iter().map(|e| e.1).sum();
                prop_assert_eq!(total as usize, fs.len());
            }
        }
    }
}
