//! Relation classification for slot filling.
//!
//! Three classifier families share one instance model: wildcard pattern
//! matchers ([`patterns`]), linear SVMs over bag-of-word and skip n-gram
//! features ([`features`], [`svm`]) and convolutional networks that split the
//! sentence at the two relation arguments ([`neural`]). Their calibrated
//! scores are interpolated by [`combiner`]. [`distsup`] generates synthetic
//! distantly supervised corpora and [`evalkit`] scores everything.

pub mod combiner;
pub mod commands;
pub mod corpus;
pub mod distsup;
pub mod evalkit;
pub mod features;
pub mod neural;
pub mod patterns;
pub mod seed;
pub mod svm;

pub use corpus::{Genre, Label, RelationInstance, Span, Split};

/// Probability of the positive class, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ModelScore(f64);

impl ModelScore {
    /// Decision threshold shared by every model and the combiner.
    pub const THRESHOLD: f64 = 0.5;

    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(ModelScore(value))
    }

    pub fn from_bool(positive: bool) -> Self {
        ModelScore(if positive { 1.0 } else { 0.0 })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_positive(self) -> bool {
        self.0 >= Self::THRESHOLD
    }

    pub fn decide(self, threshold: f64) -> Label {
        Label::from_bool(self.0 >= threshold)
    }
}

/// Anything that scores a single instance.
pub trait Classifier {
    fn score(&self, instance: &RelationInstance) -> ModelScore;
}

impl<F> Classifier for F
where
    F: Fn(&RelationInstance) -> ModelScore,
{
    fn score(&self, instance: &RelationInstance) -> ModelScore {
        self(instance)
    }
}
