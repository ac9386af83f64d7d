//! Convolutional relation classifiers.
//!
//! Three variants share one implementation:
//!
//! * `Contextwise` splits the sentence into left, middle and right context
//!   before convolution, convolves each context with the same filters, keeps
//!   the `k` largest activations per filter and context, appends the order
//!   flag and feeds a tanh hidden layer and a two-way softmax.
//! * `Piecewise` convolves the whole sentence once, max-pools each filter
//!   over the three argument-delimited segments and goes straight to the
//!   softmax.
//! * `PiecewiseExt` is `Piecewise` with k-max pooling per segment and the
//!   hidden layer, giving exactly the parameter count of `Contextwise`.
//!
//! Convolution is wide: every input is framed by `w - 1` zero PAD vectors on
//! each side, so a context of length `n` yields `n + w - 1` activations.

mod explain;
mod gradcheck;
mod io;
mod network;
mod train;

use thiserror::Error;

pub use explain::{explain_top_filters, pooled_filter_maxima, rank_filters, Attribution};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use network::{convolve, kmax_pool, kmax_select, CnnModel, CnnParams, Gradients};
pub use train::{train_cnn, CnnTrainLog};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyData,
    #[error("training instances span several slots ({0} and {1})")]
    MixedSlots(String, String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("embedding table has {rows}x{dim}, expected {expected_rows}x{expected_dim}")]
    EmbeddingShape {
        rows: usize,
        dim: usize,
        expected_rows: usize,
        expected_dim: usize,
    },
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vocabulary hash mismatch: file says {stored}, contents hash to {computed}")]
    VocabHashMismatch { stored: String, computed: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Contextwise,
    Piecewise,
    PiecewiseExt,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Contextwise => "contextwise",
            Variant::Piecewise => "piecewise",
            Variant::PiecewiseExt => "piecewise_ext",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "contextwise" => Some(Variant::Contextwise),
            "piecewise" => Some(Variant::Piecewise),
            "piecewise_ext" => Some(Variant::PiecewiseExt),
            _ => None,
        }
    }
}

/// Nonlinearity of the convolution and hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub variant: Variant,
    pub n_filters: usize,
    pub width: usize,
    pub k: usize,
    pub hidden: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub finetune_embeddings: bool,
    pub activation: Activation,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            variant: Variant::Contextwise,
            n_filters: 50,
            width: 3,
            k: 3,
            hidden: 50,
            dim: 50,
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            finetune_embeddings: true,
            activation: Activation::Tanh,
        }
    }
}

/// The grids searched on dev for the number of filters, hidden size and
/// filter width.
pub const FILTER_GRID: [usize; 3] = [300, 1000, 3000];
pub const HIDDEN_GRID: [usize; 3] = [100, 300, 1000];
pub const WIDTH_GRID: [usize; 2] = [3, 5];

impl CnnConfig {
    pub fn with_variant(variant: Variant) -> Self {
        CnnConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let sizes = [
            ("n_filters", self.n_filters),
            ("width", self.width),
            ("k", self.k),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(NeuralError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.has_hidden() && self.hidden == 0 {
            return Err(NeuralError::InvalidConfig("hidden must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn has_hidden(&self) -> bool {
        self.variant != Variant::Piecewise
    }

    /// Values kept per filter and region: 1 for the plain piecewise CNN.
    pub fn pooled_per_region(&self) -> usize {
        match self.variant {
            Variant::Piecewise => 1,
            _ => self.k,
        }
    }

    /// Pooled features plus the order flag.
    pub fn feature_width(&self) -> usize {
        3 * self.pooled_per_region() * self.n_filters + 1
    }

    /// Input width of the softmax layer.
    pub fn top_width(&self) -> usize {
        if self.has_hidden() {
            self.hidden
        } else {
            self.feature_width()
        }
    }
}

/// Trainable parameters excluding embeddings.
pub fn param_count(config: &CnnConfig) -> usize {
    let filters = config.n_filters * config.width * config.dim + config.n_filters;
    let hidden = if config.has_hidden() {
        config.hidden * config.feature_width() + config.hidden
    } else {
        0
    };
    let softmax = 2 * config.top_width() + 2;
    filters + hidden + softmax
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_by_hand() {
        let cfg = CnnConfig {
            n_filters: 1,
            width: 3,
            dim: 2,
            hidden: 4,
            k: 3,
            ..Default::default()
        };
        assert_eq!(param_count(&cfg), 7 + 44 + 10);
    }

    #[test]
    fn parity_and_monotonicity() {
        for f in [1, 10, 300] {
            for h in [4, 100] {
                let c = CnnConfig { n_filters: f, hidden: h, ..Default::default() };
                let p = CnnConfig { variant: Variant::PiecewiseExt, ..c.clone() };
                assert_eq!(param_count(&c), param_count(&p));
                let doubled = CnnConfig { n_filters: 2 * f, ..c.clone() };
                assert!(param_count(&doubled) > param_count(&c));
            }
        }
        let plain = CnnConfig { variant: Variant::Piecewise, n_filters: 2, width: 3, dim: 2, ..Default::default() };
        // filters 2*6+2, softmax 2*(3*2+1)+2
        assert_eq!(param_count(&plain), 14 + 16);
    }

    #[test]
    fn config_validation() {
        assert!(CnnConfig::default().validate().is_ok());
        let bad = CnnConfig { n_filters: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(NeuralError::InvalidConfig(_))));
        let bad = CnnConfig { learning_rate: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = CnnConfig { variant: Variant::Piecewise, hidden: 0, ..Default::default() };
        assert!(ok.validate().is_ok());
    }
}
