//! Wildcard token patterns matched against the middle context.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::RelationInstance;
use crate::{Classifier, ModelScore};

pub const DEFAULT_GAP: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum PatternError {
    #[error("line {line}: expected `slot<TAB>pattern`")]
    Malformed { line: usize },
    #[error("line {line}: pattern has no literal token")]
    NoLiteral { line: usize },
    #[error("line {line}: adjacent wildcards")]
    AdjacentWildcards { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    /// Stored lowercased.
    Literal(String),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub slot: String,
    elements: Vec<Element>,
}

impl Pattern {
    /// Parses space-separated elements; `*` is the wildcard.
    pub fn parse(slot: &str, text: &str) -> Result<Self, PatternError> {
        Self::parse_at(slot, text, 0)
    }

    fn parse_at(slot: &str, text: &str, line: usize) -> Result<Self, PatternError> {
        let elements: Vec<Element> = text
            .split_whitespace()
            .map(|t| {
                if t == "*" {
                    Element::Wildcard
                } else {
                    Element::Literal(t.to_lowercase())
                }
            })
            .collect();
        if !elements.iter().any(|e| matches!(e, Element::Literal(_))) {
            return Err(PatternError::NoLiteral { line });
        }
        if elements
            .windows(2)
            .any(|w| w[0] == Element::Wildcard && w[1] == Element::Wildcard)
        {
            return Err(PatternError::AdjacentWildcards { line });
        }
        Ok(Pattern {
            slot: slot.to_string(),
            elements,
        })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// True iff the pattern aligns with some contiguous sub-span of `context`,
    /// literals matching case-insensitively and each wildcard absorbing
    /// between 0 and `gap` tokens.
    pub fn matches<S: AsRef<str>>(&self, context: &[S], gap: usize) -> bool {
        let lowered: Vec<String> = context.iter().map(|t| t.as_ref().to_lowercase()).collect();
        (0..=lowered.len()).any(|start| match_from(&self.elements, &lowered, start, gap))
    }
}

fn match_from(elements: &[Element], context: &[String], pos: usize, gap: usize) -> bool {
    let Some((head, rest)) = elements.split_first() else {
        return true;
    };
    match head {
        Element::Literal(word) => {
            pos < context.len() && context[pos] == *word && match_from(rest, context, pos + 1, gap)
        }
        Element::Wildcard => (0..=gap)
            .take_while(|skip| pos + skip <= context.len())
            .any(|skip| match_from(rest, context, pos + skip, gap)),
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .elements
            .iter()
            .map(|e| match e {
                Element::Literal(w) => w.as_str(),
                Element::Wildcard => "*",
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Which tokens a pattern is matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchScope {
    #[default]
    Middle,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternSet {
    by_slot: BTreeMap<String, Vec<Pattern>>,
    pub gap: usize,
    pub scope: MatchScope,
}

impl PatternSet {
    pub fn new() -> Self {
        PatternSet {
            by_slot: BTreeMap::new(),
            gap: DEFAULT_GAP,
            scope: MatchScope::Middle,
        }
    }

    /// Parses `slot<TAB>token token * token` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        let mut set = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.starts_with('#') || raw.trim().is_empty() {
                continue;
            }
            let (slot, body) = raw
                .split_once('\t')
                .ok_or(PatternError::Malformed { line })?;
            let slot = slot.trim();
            if slot.is_empty() {
                return Err(PatternError::Malformed { line });
            }
            set.insert(Pattern::parse_at(slot, body, line)?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, pattern: Pattern) {
        self.by_slot
            .entry(pattern.slot.clone())
            .or_default()
            .push(pattern);
    }

    pub fn patterns(&self, slot: &str) -> &[Pattern] {
        self.by_slot.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.by_slot.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_slot.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Canonical file rendering, grouped by slot.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (slot, pats) in &self.by_slot {
            for p in pats {
                out.push_str(&format!("{slot}\t{p}\n"));
            }
        }
        out
    }

    pub fn classify(&self, instance: &RelationInstance) -> ModelScore {
        let context: &[String] = match self.scope {
            MatchScope::Middle => instance.split_contexts().middle,
            MatchScope::Sentence => &instance.tokens,
        };
        let hit = self
            .patterns(&instance.slot)
            .iter()
            .any(|p| p.matches(context, self.gap));
        ModelScore::from_bool(hit)
    }
}

pub fn classify_pattern(set: &PatternSet, instance: &RelationInstance) -> ModelScore {
    set.classify(instance)
}

impl Classifier for PatternSet {
    fn score(&self, instance: &RelationInstance) -> ModelScore {
        self.classify(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Genre, Label, Span, Split};
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Expands each wildcard into every run length 0..=gap of "any token"
    /// placeholders and slides each expansion over the context.
    fn expansion_oracle(p: &Pattern, ctx: &[String], gap: usize) -> bool {
        let mut expansions: Vec<Vec<Option<String>>> = vec![vec![]];
        for e in p.elements() {
            expansions = match e {
                Element::Literal(w) => expansions
                    .into_iter()
                    .map(|mut x| {
                        x.push(Some(w.clone()));
                        x
                    })
                    .collect(),
                Element::Wildcard => expansions
                    .into_iter()
                    .flat_map(|x| {
                        (0..=gap).map(move |n| {
                            let mut y = x.clone();
                            y.extend(std::iter::repeat_n(None, n));
                            y
                        })
                    })
                    .collect(),
            };
        }
        let ctx: Vec<String> = ctx.iter().map(|t| t.to_lowercase()).collect();
        expansions.iter().any(|exp| {
            exp.len() <= ctx.len()
                && (0..=ctx.len() - exp.len()).any(|s| {
                    exp.iter()
                        .enumerate()
                        .all(|(i, e)| e.as_ref().is_none_or(|w| *w == ctx[s + i]))
                })
        })
    }

    fn instance(slot: &str, middle: &str) -> RelationInstance {
        let mut tokens = vec!["A".to_string()];
        tokens.extend(toks(middle));
        let n = tokens.len();
        tokens.push("B".into());
        RelationInstance::new(
            slot,
            Label::Positive,
            Genre::News,
            Split::Dev,
            tokens,
            Span::new(0, 1),
            Span::new(n, n + 1),
        )
        .unwrap()
    }

    #[test]
    fn wildcard_absorbs_gap() {
        let p = Pattern::parse("org:x", "founder * of").unwrap();
        let ctx = toks(", founder and director of");
        assert!(p.matches(&ctx, 3));
        assert!(expansion_oracle(&p, &ctx, 3));
        assert!(!p.matches(&ctx, 1));
    }

    #[test]
    fn literal_examples() {
        let p = Pattern::parse("s", "founded").unwrap();
        assert!(p.matches(&toks("founded"), 3));
        assert!(!p.matches(&toks("was born in"), 3));
        assert!(p.matches(&toks("FOUNDED"), 3));
    }

    #[test]
    fn invalid_patterns() {
        assert_eq!(Pattern::parse("s", "*"), Err(PatternError::NoLiteral { line: 0 }));
        assert_eq!(
            PatternSet::parse("s\ta * * b\n"),
            Err(PatternError::AdjacentWildcards { line: 1 })
        );
        assert_eq!(
            PatternSet::parse("# c\nno tab here\n"),
            Err(PatternError::Malformed { line: 2 })
        );
    }

    #[test]
    fn classify_examples() {
        let inst = instance("per:children", "welcomed daughter");
        assert_eq!(PatternSet::new().classify(&inst).value(), 0.0);

        let set = PatternSet::parse("per:children\twelcomed daughter\n").unwrap();
        assert_eq!(set.classify(&inst).value(), 1.0);

        let set = PatternSet::parse("per:children\tson of\nper:children\twelcomed * daughter\n").unwrap();
        assert_eq!(set.classify(&inst).value(), 1.0);

        let other = instance("per:spouse", "welcomed daughter");
        assert_eq!(set.classify(&other).value(), 0.0);
    }

    #[test]
    fn sentence_scope_sees_mentions() {
        let inst = instance("s", "x");
        let mut set = PatternSet::parse("s\ta x b\n").unwrap();
        assert_eq!(set.classify(&inst).value(), 0.0);
        set.scope = MatchScope::Sentence;
        assert_eq!(set.classify(&inst).value(), 1.0);
    }

    #[test]
    fn text_roundtrip() {
        let text = "a:b\tfounder * of\na:b\tis based in\nc:d\tx\n";
        let set = PatternSet::parse(text).unwrap();
        assert_eq!(set.to_text(), text);
        assert_eq!(set.len(), 3);
    }

    fn arb_pattern() -> impl Strategy<Value = Pattern> {
        proptest::collection::vec(prop_oneof![3 => "[abc]", 1 => Just("*".to_string())], 1..5)
            .prop_filter_map("valid pattern", |els| Pattern::parse("s", &els.join(" ")).ok())
    }

    fn arb_context() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[abcAB]", 0..10)
    }

    proptest! {
        #[test]
        fn matches_expansion_oracle(p in arb_pattern(), ctx in arb_context(), gap in 0usize..4) {
            prop_assert_eq!(p.matches(&ctx, gap), expansion_oracle(&p, &ctx, gap));
        }

        #[test]
        fn zero_gap_is_substring_search(p in arb_pattern(), ctx in arb_context()) {
            let lits: Vec<String> = p.elements().iter().filter_map(|e| match e {
                Element::Literal(w) => Some(w.clone()),
                Element::Wildcard => None,
            }).collect();
            let lower: Vec<String> = ctx.iter().map(|t| t.to_lowercase()).collect();
            let naive = lower.len() >= lits.len()
                && (0..=lower.len() - lits.len()).any(|s| lower[s..s + lits.len()] == lits[..]);
            prop_assert_eq!(p.matches(&ctx, 0), naive);
        }

        #[test]
        fn case_insensitive(p in arb_pattern(), ctx in arb_context()) {
            let upper: Vec<String> = ctx.iter().map(|t| t.to_uppercase()).collect();
            prop_assert_eq!(p.matches(&ctx, 3), p.matches(&upper, 3));
        }

        #[test]
        fn adding_patterns_is_monotone(ps in proptest::collection::vec(arb_pattern(), 0..4),
                                       extra in arb_pattern(), ctx in arb_context()) {
            let mut set = PatternSet::new();
            for p in ps { set.insert(p); }
            let inst = instance("s", &if ctx.is_empty() { "z".to_string() } else { ctx.join(" ") });
            let before = set.classify(&inst).value();
            set.insert(extra);
            prop_assert!(set.classify(&inst).value() >= before);
        }
    }
}
