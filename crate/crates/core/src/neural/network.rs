use std::collections::BTreeMap;

use rand::Rng;

use super::{Activation, CnnConfig, NeuralError, Variant};
use crate::corpus::{EmbeddingTable, RelationInstance, Span, Vocabulary, PAD_INDEX};
use crate::seed::rng_for;
use crate::{Classifier, ModelScore};

/// Dense parameter tensors, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub embeddings: EmbeddingTable,
    /// `n_filters x (width * dim)`; window row `j` of filter `f` starts at
    /// `f * width * dim + j * dim`.
    pub filters: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// `hidden x feature_width`; empty for the plain piecewise CNN.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `2 x top_width`; row 1 is the positive class.
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl CnnParams {
    pub fn zeros(config: &CnnConfig, embeddings: EmbeddingTable) -> Self {
        let (f, wd) = (config.n_filters, config.width * config.dim);
        let (hw, hb) = if config.has_hidden() {
            (config.hidden * config.feature_width(), config.hidden)
        } else {
            (0, 0)
        };
        CnnParams {
            embeddings,
            filters: vec![0.0; f * wd],
            conv_bias: vec![0.0; f],
            hidden_w: vec![0.0; hw],
            hidden_b: vec![0.0; hb],
            out_w: vec![0.0; 2 * config.top_width()],
            out_b: vec![0.0; 2],
        }
    }

    /// Dense tensors other than the embeddings, in a fixed order.
    pub(crate) fn dense_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.filters,
            &mut self.conv_bias,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub(crate) fn dense(&self) -> [&Vec<f64>; 6] {
        [
            &self.filters,
            &self.conv_bias,
            &self.hidden_w,
            &self.hidden_b,
            &self.out_w,
            &self.out_b,
        ]
    }
}

/// Same shapes as [`CnnParams`]; embedding gradients are kept per touched row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub filters: Vec<f64>,
    pub conv_bias: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &CnnParams) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            filters: vec![0.0; p.filters.len()],
            conv_bias: vec![0.0; p.conv_bias.len()],
            hidden_w: vec![0.0; p.hidden_w.len()],
            hidden_b: vec![0.0; p.hidden_b.len()],
            out_w: vec![0.0; p.out_w.len()],
            out_b: vec![0.0; p.out_b.len()],
        }
    }

    pub(crate) fn dense(&self) -> [&Vec<f64>; 6] {
        [
            &self.filters,
            &self.conv_bias,
            &self.hidden_w,
            &self.hidden_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub(crate) fn reset(&mut self) {
        self.embeddings.clear();
        for t in [
            &mut self.filters,
            &mut self.conv_bias,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ] {
            t.fill(0.0);
        }
    }
}

/// Wide convolution of a token-id sequence: `n_filters` rows of
/// `len + width - 1` activations. Out-of-range window rows read the zero PAD
/// vector.
pub fn convolve(
    ids: &[usize],
    embeddings: &EmbeddingTable,
    filters: &[f64],
    conv_bias: &[f64],
    width: usize,
    activation: Activation,
) -> Vec<Vec<f64>> {
    let dim = embeddings.dim();
    let n_filters = conv_bias.len();
    let positions = ids.len() + width - 1;
    let mut out = vec![vec![0.0; positions]; n_filters];
    for p in 0..positions {
        for (f, row) in out.iter_mut().enumerate() {
            let kernel = &filters[f * width * dim..(f + 1) * width * dim];
            let mut pre = conv_bias[f];
            for j in 0..width {
                if let Some(t) = window_token(p, j, width, ids.len()) {
                    let x = embeddings.row(ids[t]);
                    let w = &kernel[j * dim..(j + 1) * dim];
                    pre += w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            row[p] = activation.apply(pre);
        }
    }
    out
}

/// Token index read by row `j` of the window at activation position `p`, if
/// it is inside the sequence rather than padding.
#[inline]
fn window_token(p: usize, j: usize, width: usize, len: usize) -> Option<usize> {
    let t = (p + j).checked_sub(width - 1)?;
    (t < len).then_some(t)
}

/// Positions of the `k` largest values, in their original order. Ties prefer
/// earlier positions.
pub fn kmax_select(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// The `k` largest values in sequence order, right-padded with zeros.
pub fn kmax_pool(values: &[f64], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = kmax_select(values, k).into_iter().map(|i| values[i]).collect();
    out.resize(k, 0.0);
    out
}

/// One convolved sequence.
#[derive(Debug, Clone)]
pub(crate) struct ConvInput {
    pub ids: Vec<usize>,
    /// Sentence position of `ids[0]`.
    pub offset: usize,
    pub acts: Vec<Vec<f64>>,
}

/// A pooling region: an activation range of one input.
#[derive(Debug, Clone)]
pub(crate) struct Region {
    pub input: usize,
    /// Per filter, the selected activation positions (at most `kk`).
    pub selected: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub inputs: Vec<ConvInput>,
    pub regions: Vec<Region>,
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl Trace {
    /// `-log p(label)`.
    pub fn loss(&self, positive: bool) -> f64 {
        let (a, b) = (self.logits[0], self.logits[1]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        lse - self.logits[usize::from(positive)]
    }
}

/// Softmax over two logits, computed in log space.
fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Activation-position boundaries `(a, b)` splitting a whole-sentence
/// convolution into left `[0, a)`, middle `[a, b)` and right `[b, P)`.
/// A window belongs to the segment holding its center token; centers inside
/// either mention count as middle.
pub(crate) fn segment_bounds(first: Span, second: Span, width: usize, len: usize) -> (usize, usize) {
    let positions = len + width - 1;
    let half = (width - 1) / 2;
    let center = |p: usize| p as isize + half as isize - (width as isize - 1);
    let a = (0..positions)
        .find(|&p| center(p) >= first.start as isize)
        .unwrap_or(positions);
    let b = (0..positions)
        .find(|&p| center(p) >= second.end as isize)
        .unwrap_or(positions);
    (a, b.max(a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub slot: String,
    pub config: CnnConfig,
    pub vocab: Vocabulary,
    pub params: CnnParams,
}

impl CnnModel {
    /// Glorot-uniform weights, zero biases; deterministic in `config.seed`.
    pub fn init(
        slot: &str,
        config: CnnConfig,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
    ) -> Result<Self, NeuralError> {
        config.validate()?;
        if embeddings.rows() != vocab.len() || embeddings.dim() != config.dim {
            return Err(NeuralError::EmbeddingShape {
                rows: embeddings.rows(),
                dim: embeddings.dim(),
                expected_rows: vocab.len(),
                expected_dim: config.dim,
            });
        }
        let mut params = CnnParams::zeros(&config, embeddings);
        let mut rng = rng_for(config.seed, "cnn-init");
        let mut fill = |t: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.iter_mut().for_each(|x| *x = rng.gen_range(-limit..limit));
        };
        let wd = config.width * config.dim;
        fill(&mut params.filters, wd, config.n_filters);
        if config.has_hidden() {
            fill(&mut params.hidden_w, config.feature_width(), config.hidden);
        }
        fill(&mut params.out_w, config.top_width(), 2);
        Ok(CnnModel {
            slot: slot.to_string(),
            config,
            vocab,
            params,
        })
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.lookup(t)).collect()
    }

    pub(crate) fn forward_trace(&self, instance: &RelationInstance) -> Trace {
        let cfg = &self.config;
        let p = &self.params;
        let conv = |ids: Vec<usize>, offset: usize| ConvInput {
            acts: convolve(&ids, &p.embeddings, &p.filters, &p.conv_bias, cfg.width, cfg.activation),
            ids,
            offset,
        };
        let (first, second) = instance.ordered_spans();
        let (inputs, ranges): (Vec<ConvInput>, Vec<(usize, usize, usize)>) = match cfg.variant {
            Variant::Contextwise => {
                let ctx = instance.split_contexts();
                let offsets = [0, first.end, second.end];
                let inputs: Vec<ConvInput> = ctx
                    .as_array()
                    .iter()
                    .zip(offsets)
                    .map(|(c, off)| conv(self.token_ids(c), off))
                    .collect();
                let ranges = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, inp)| (i, 0, inp.acts.first().map_or(0, Vec::len)))
                    .collect();
                (inputs, ranges)
            }
            Variant::Piecewise | Variant::PiecewiseExt => {
                let input = conv(self.token_ids(&instance.tokens), 0);
                let positions = instance.tokens.len() + cfg.width - 1;
                let (a, b) = segment_bounds(first, second, cfg.width, instance.tokens.len());
                (vec![input], vec![(0, 0, a), (0, a, b), (0, b, positions)])
            }
        };

        let kk = cfg.pooled_per_region();
        let mut features = Vec::with_capacity(cfg.feature_width());
        let mut regions = Vec::with_capacity(3);
        for (input, lo, hi) in ranges {
            let mut selected = Vec::with_capacity(cfg.n_filters);
            for row in &inputs[input].acts {
                let sel: Vec<usize> = kmax_select(&row[lo..hi], kk).into_iter().map(|i| i + lo).collect();
                features.extend(sel.iter().map(|&i| row[i]));
                features.extend(std::iter::repeat_n(0.0, kk - sel.len()));
                selected.push(sel);
            }
            regions.push(Region { input, selected });
        }
        features.push(instance.order_flag().as_unit());

        let hidden: Vec<f64> = if cfg.has_hidden() {
            let width = features.len();
            (0..cfg.hidden)
                .map(|i| {
                    let w = &p.hidden_w[i * width..(i + 1) * width];
                    let pre = p.hidden_b[i] + w.iter().zip(&features).map(|(a, b)| a * b).sum::<f64>();
                    cfg.activation.apply(pre)
                })
                .collect()
        } else {
            Vec::new()
        };
        let top = if cfg.has_hidden() { &hidden } else { &features };
        let tw = top.len();
        let mut logits = [0.0; 2];
        for (c, l) in logits.iter_mut().enumerate() {
            let w = &p.out_w[c * tw..(c + 1) * tw];
            *l = p.out_b[c] + w.iter().zip(top).map(|(a, b)| a * b).sum::<f64>();
        }
        Trace {
            inputs,
            regions,
            features,
            hidden,
            probs: softmax2(logits),
            logits,
        }
    }

    /// Class probabilities `[negative, positive]`.
    pub fn probabilities(&self, instance: &RelationInstance) -> [f64; 2] {
        self.forward_trace(instance).probs
    }

    pub fn forward(&self, instance: &RelationInstance) -> ModelScore {
        ModelScore::new(self.probabilities(instance)[1].clamp(0.0, 1.0)).expect("clamped probability")
    }

    pub fn loss(&self, instance: &RelationInstance) -> f64 {
        self.forward_trace(instance).loss(instance.label.is_positive())
    }

    /// Adds the cross-entropy gradient for one instance to `grads`; returns
    /// the loss.
    pub fn accumulate_gradients(&self, instance: &RelationInstance, grads: &mut Gradients) -> f64 {
        let trace = self.forward_trace(instance);
        let positive = instance.label.is_positive();
        self.backward(&trace, positive, grads);
        trace.loss(positive)
    }

    pub(crate) fn backward(&self, trace: &Trace, positive: bool, g: &mut Gradients) {
        let cfg = &self.config;
        let p = &self.params;
        let act = cfg.activation;
        let target = usize::from(positive);
        let dlogits = [
            trace.probs[0] - f64::from(target == 0),
            trace.probs[1] - f64::from(target == 1),
        ];
        let top = if cfg.has_hidden() { &trace.hidden } else { &trace.features };
        let tw = top.len();
        let mut dtop = vec![0.0; tw];
        for c in 0..2 {
            g.out_b[c] += dlogits[c];
            let w = &p.out_w[c * tw..(c + 1) * tw];
            let gw = &mut g.out_w[c * tw..(c + 1) * tw];
            for i in 0..tw {
                gw[i] += dlogits[c] * top[i];
                dtop[i] += w[i] * dlogits[c];
            }
        }

        let fw = trace.features.len();
        let dfeatures = if cfg.has_hidden() {
            let mut dz = vec![0.0; fw];
            for i in 0..cfg.hidden {
                let dpre = dtop[i] * act.derivative_from_output(trace.hidden[i]);
                if dpre == 0.0 {
                    continue;
                }
                g.hidden_b[i] += dpre;
                let w = &p.hidden_w[i * fw..(i + 1) * fw];
                let gw = &mut g.hidden_w[i * fw..(i + 1) * fw];
                for j in 0..fw {
                    gw[j] += dpre * trace.features[j];
                    dz[j] += w[j] * dpre;
                }
            }
            dz
        } else {
            dtop
        };

        let (width, dim) = (cfg.width, cfg.dim);
        let kk = cfg.pooled_per_region();
        let emb = &p.embeddings;
        for (r, region) in trace.regions.iter().enumerate() {
            let input = &trace.inputs[region.input];
            for (f, sel) in region.selected.iter().enumerate() {
                let base = (r * cfg.n_filters + f) * kk;
                for (s, &pos) in sel.iter().enumerate() {
                    let dpre = dfeatures[base + s] * act.derivative_from_output(input.acts[f][pos]);
                    if dpre == 0.0 {
                        continue;
                    }
                    g.conv_bias[f] += dpre;
                    let kernel = &p.filters[f * width * dim..(f + 1) * width * dim];
                    for j in 0..width {
                        let Some(t) = window_token(pos, j, width, input.ids.len()) else {
                            continue;
                        };
                        let id = input.ids[t];
                        if id == PAD_INDEX {
                            continue;
                        }
                        let x = emb.row(id);
                        let gk = &mut g.filters[f * width * dim + j * dim..f * width * dim + (j + 1) * dim];
                        for e in 0..dim {
                            gk[e] += dpre * x[e];
                        }
                        if cfg.finetune_embeddings {
                            let ge = g.embeddings.entry(id).or_insert_with(|| vec![0.0; dim]);
                            let w = &kernel[j * dim..(j + 1) * dim];
                            for e in 0..dim {
                                ge[e] += dpre * w[e];
                            }
                        }
                    }
                }
            }
        }
    }

    /// `params -= scale * grads`. The PAD row is never touched.
    pub fn apply_gradients(&mut self, grads: &Gradients, scale: f64) {
        for (t, g) in self.params.dense_mut().into_iter().zip(grads.dense()) {
            for (x, d) in t.iter_mut().zip(g) {
                *x -= scale * d;
            }
        }
        if self.config.finetune_embeddings {
            for (&row, g) in &grads.embeddings {
                if row == PAD_INDEX {
                    continue;
                }
                for (x, d) in self.params.embeddings.row_mut(row).iter_mut().zip(g) {
                    *x -= scale * d;
                }
            }
        }
    }
}

impl Classifier for CnnModel {
    fn score(&self, instance: &RelationInstance) -> ModelScore {
        self.forward(instance)
    }
}
