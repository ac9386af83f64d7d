//! Relation instances, context splitting, vocabulary and embedding tables.
//!
//! Instance files are UTF-8 with one instance per line and seven tab-separated
//! fields:
//!
//! ```text
//! slot  label(0|1)  genre  split  name_surface|start,end  filler_surface|start,end  tokens
//! ```
//!
//! Tokens are pre-tokenized and space separated; nothing in this crate
//! re-tokenizes text.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: expected 7 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: span {start},{end} out of bounds for {len} tokens")]
    SpanOutOfBounds {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: name and filler spans overlap")]
    OverlappingSpans { line: usize },
    #[error("line {line}: empty mention span")]
    EmptySpan { line: usize },
    #[error("line {line}: unknown {what} tag `{tag}`")]
    UnknownTag {
        line: usize,
        what: &'static str,
        tag: String,
    },
    #[error("embedding file line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding file line {line}: non-numeric value `{value}`")]
    NonNumeric { line: usize, value: String },
    #[error("embedding file: {0}")]
    BadEmbeddingHeader(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    /// `1` for positive, `0` for negative, matching the file encoding.
    pub fn as_digit(self) -> u8 {
        match self {
            Label::Positive => 1,
            Label::Negative => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Genre {
    News,
    Web,
    Forum,
}

impl Genre {
    /// Forum text is grouped with web text for every genre split.
    pub fn coarse(self) -> Genre {
        match self {
            Genre::Forum => Genre::Web,
            g => g,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Genre::News => "news",
            Genre::Web => "web",
            Genre::Forum => "forum",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Genre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "news" => Ok(Genre::News),
            "web" => Ok(Genre::Web),
            "forum" => Ok(Genre::Forum),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(other.to_string()),
        }
    }
}

/// Which argument comes first in the sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderFlag {
    NameFirst,
    FillerFirst,
}

impl OrderFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderFlag::NameFirst => "name-first",
            OrderFlag::FillerFirst => "filler-first",
        }
    }

    /// Scalar encoding used as the network's flag input.
    pub fn as_unit(self) -> f64 {
        match self {
            OrderFlag::NameFirst => 1.0,
            OrderFlag::FillerFirst => 0.0,
        }
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationInstance {
    pub slot: String,
    pub label: Label,
    pub genre: Genre,
    pub split: Split,
    pub tokens: Vec<String>,
    pub name_span: Span,
    pub filler_span: Span,
    pub name_surface: String,
    pub filler_surface: String,
}

/// Span validation failure, before a line number is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanProblem {
    Empty,
    OutOfBounds(Span),
    Overlap,
}

impl RelationInstance {
    /// Builds an instance whose mention surfaces are the joined span tokens.
    pub fn new(
        slot: impl Into<String>,
        label: Label,
        genre: Genre,
        split: Split,
        tokens: Vec<String>,
        name_span: Span,
        filler_span: Span,
    ) -> Result<Self, SpanProblem> {
        check_spans(tokens.len(), name_span, filler_span)?;
        let name_surface = tokens[name_span.start..name_span.end].join(" ");
        let filler_surface = tokens[filler_span.start..filler_span.end].join(" ");
        Ok(RelationInstance {
            slot: slot.into(),
            label,
            genre,
            split,
            tokens,
            name_span,
            filler_span,
            name_surface,
            filler_surface,
        })
    }

    pub fn order_flag(&self) -> OrderFlag {
        if self.name_span.start < self.filler_span.start {
            OrderFlag::NameFirst
        } else {
            OrderFlag::FillerFirst
        }
    }

    /// The mention occurring first and the one occurring second.
    pub fn ordered_spans(&self) -> (Span, Span) {
        match self.order_flag() {
            OrderFlag::NameFirst => (self.name_span, self.filler_span),
            OrderFlag::FillerFirst => (self.filler_span, self.name_span),
        }
    }

    pub fn split_contexts(&self) -> SplitContexts<'_> {
        let (first, second) = self.ordered_spans();
        SplitContexts {
            left: &self.tokens[..first.start],
            middle: &self.tokens[first.end..second.start],
            right: &self.tokens[second.end..],
            order: self.order_flag(),
        }
    }

    /// Serializes to one instance-file line (without trailing newline).
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}|{},{}\t{}|{},{}\t{}",
            self.slot,
            self.label.as_digit(),
            self.genre,
            self.split,
            self.name_surface,
            self.name_span.start,
            self.name_span.end,
            self.filler_surface,
            self.filler_span.start,
            self.filler_span.end,
            self.tokens.join(" ")
        )
    }
}

fn check_spans(len: usize, a: Span, b: Span) -> Result<(), SpanProblem> {
    if a.is_empty() || b.is_empty() {
        return Err(SpanProblem::Empty);
    }
    for s in [a, b] {
        if s.end > len {
            return Err(SpanProblem::OutOfBounds(s));
        }
    }
    if a.overlaps(&b) {
        return Err(SpanProblem::Overlap);
    }
    Ok(())
}

/// Left, middle and right contexts around the two argument mentions.
///
/// Mention tokens belong to none of the three contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitContexts<'a> {
    pub left: &'a [String],
    pub middle: &'a [String],
    pub right: &'a [String],
    pub order: OrderFlag,
}

impl<'a> SplitContexts<'a> {
    pub fn as_array(&self) -> [&'a [String]; 3] {
        [self.left, self.middle, self.right]
    }
}

pub fn split_contexts(instance: &RelationInstance) -> SplitContexts<'_> {
    instance.split_contexts()
}

fn parse_span(field: &str, line: usize) -> Result<(String, Span), CorpusError> {
    let malformed = |message: String| CorpusError::Malformed { line, message };
    let (surface, range) = field
        .rsplit_once('|')
        .ok_or_else(|| malformed(format!("mention `{field}` lacks `|start,end`")))?;
    let (start, end) = range
        .split_once(',')
        .ok_or_else(|| malformed(format!("span `{range}` is not `start,end`")))?;
    let start = start
        .trim()
        .parse::<usize>()
        .map_err(|_| malformed(format!("bad span start `{start}`")))?;
    let end = end
        .trim()
        .parse::<usize>()
        .map_err(|_| malformed(format!("bad span end `{end}`")))?;
    Ok((surface.to_string(), Span::new(start, end)))
}

fn parse_line(raw: &str, line: usize) -> Result<RelationInstance, CorpusError> {
    let fields: Vec<&str> = raw.split('\t').collect();
    if fields.len() != 7 {
        return Err(CorpusError::FieldCount {
            line,
            found: fields.len(),
        });
    }
    let label = match fields[1] {
        "1" => Label::Positive,
        "0" => Label::Negative,
        other => {
            return Err(CorpusError::UnknownTag {
                line,
                what: "label",
                tag: other.to_string(),
            })
        }
    };
    let genre = fields[2].parse::<Genre>().map_err(|tag| CorpusError::UnknownTag {
        line,
        what: "genre",
        tag,
    })?;
    let split = fields[3].parse::<Split>().map_err(|tag| CorpusError::UnknownTag {
        line,
        what: "split",
        tag,
    })?;
    let (name_surface, name_span) = parse_span(fields[4], line)?;
    let (filler_surface, filler_span) = parse_span(fields[5], line)?;
    let tokens: Vec<String> = fields[6].split_whitespace().map(str::to_string).collect();
    check_spans(tokens.len(), name_span, filler_span).map_err(|p| match p {
        SpanProblem::Empty => CorpusError::EmptySpan { line },
        SpanProblem::OutOfBounds(s) => CorpusError::SpanOutOfBounds {
            line,
            start: s.start,
            end: s.end,
            len: tokens.len(),
        },
        SpanProblem::Overlap => CorpusError::OverlappingSpans { line },
    })?;
    Ok(RelationInstance {
        slot: fields[0].to_string(),
        label,
        genre,
        split,
        tokens,
        name_span,
        filler_span,
        name_surface,
        filler_surface,
    })
}

/// Parses an instance file. Lines starting with `#` and blank lines are skipped;
/// line numbers in errors are 1-based.
pub fn parse_instances(text: &str) -> Result<Vec<RelationInstance>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, l)| parse_line(l.strip_suffix('\r').unwrap_or(l), i + 1))
        .collect()
}

pub fn write_instances(instances: &[RelationInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&inst.to_line());
        out.push('\n');
    }
    out
}

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token to row index map. Indices 0 and 1 are PAD and UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.tokens.push(PAD.to_string());
        v.tokens.push(UNK.to_string());
        v.index.insert(PAD.to_string(), PAD_INDEX);
        v.index.insert(UNK.to_string(), UNK_INDEX);
        v
    }

    /// Vocabulary over every token of the instances, in first-seen order.
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a RelationInstance>) -> Self {
        let mut v = Self::new();
        for inst in instances {
            for t in &inst.tokens {
                v.add(t);
            }
        }
        v
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.add(t.as_ref());
        }
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row index for a token; unknown tokens map to UNK.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // PAD and UNK are always present
        false
    }

    /// Hex SHA-256 over the index-ordered token list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dense `|V| x dim` matrix of word vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

pub const OOV_INIT_RANGE: f64 = 0.25;

impl EmbeddingTable {
    pub fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "embedding data not a multiple of dim");
        EmbeddingTable { dim, data }
    }

    /// Every row uniform in `[-0.25, 0.25]^dim` except the zero PAD row.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..vocab.len() * dim)
            .map(|_| rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE))
            .collect();
        data[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
        EmbeddingTable { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Loads a word2vec-style text file (`<count> <dim>` header, then
/// `<token> <v1> ... <vdim>` rows) into a table aligned with `vocab`.
///
/// Tokens missing from the file are drawn uniformly from `[-0.25, 0.25]`
/// with `seed`; the PAD row is always zero.
pub fn load_embeddings(
    text: &str,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CorpusError::BadEmbeddingHeader("empty file".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(CorpusError::BadEmbeddingHeader(format!(
            "expected `<count> <dim>`, found `{header}`"
        )));
    }
    let dim: usize = head[1]
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| CorpusError::BadEmbeddingHeader(format!("bad dimension `{}`", head[1])))?;
    head[0]
        .parse::<usize>()
        .map_err(|_| CorpusError::BadEmbeddingHeader(format!("bad count `{}`", head[0])))?;

    let mut table = EmbeddingTable::random(vocab, dim, seed);
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                line: i + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for v in values {
            let x: f64 = v.parse().map_err(|_| CorpusError::NonNumeric {
                line: i + 1,
                value: v.to_string(),
            })?;
            row.push(x);
        }
        if let Some(idx) = vocab.get(token) {
            if idx != PAD_INDEX {
                table.row_mut(idx).copy_from_slice(&row);
            }
        }
    }
    Ok(table)
}
