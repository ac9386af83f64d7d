//! Binary linear SVMs trained by dual coordinate descent.
//!
//! The bias is handled as an extra constant feature of value `B` (default 1)
//! whose weight `v` is regularized with the rest, so the solver minimizes
//! `1/2 (|w|^2 + v^2) + C * sum_i max(0, 1 - y_i (w.x_i + v B))`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Label;
use crate::evalkit::SlotMetrics;
use crate::features::{FeatureKind, SparseVector, Weighting};
use crate::ModelScore;

pub const DEFAULT_C_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty dev set")]
    EmptyDevSet,
    #[error("empty C grid")]
    EmptyGrid,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Value of the constant bias feature.
    pub bias_feature: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 200,
            seed: 0,
            bias_feature: 1.0,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0) {
            return Err(SvmError::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(SvmError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.bias_feature > 0.0) {
            return Err(SvmError::InvalidConfig(format!(
                "bias feature must be positive, got {}",
                self.bias_feature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub slot: String,
    pub feature_kind: FeatureKind,
    pub weighting: Weighting,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub seed: u64,
}

/// Diagnostics from one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Dual objective `1/2 |v|^2 - sum(alpha)` after each epoch.
    pub dual_objective: Vec<f64>,
    /// Primal objective after each epoch.
    pub primal_objective: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

pub struct LabeledVector<'a> {
    pub x: &'a SparseVector,
    pub y: Label,
}

fn sign(label: Label) -> f64 {
    if label.is_positive() {
        1.0
    } else {
        -1.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    /// Logistic calibration of the margin.
    pub fn score(&self, x: &SparseVector) -> ModelScore {
        ModelScore::new(sigmoid(self.margin(x))).expect("sigmoid is within [0, 1]")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("slotfill-svm\tv1\n");
        let _ = writeln!(out, "slot\t{}", self.slot);
        let _ = writeln!(out, "feature_kind\t{}", self.feature_kind.as_str());
        let _ = writeln!(out, "weighting\t{}", self.weighting.as_str());
        let _ = writeln!(out, "dim\t{}", self.dim());
        let _ = writeln!(out, "C\t{:e}", self.c);
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "bias\t{:e}", self.bias);
        let nnz = self.weights.iter().filter(|&&w| w != 0.0).count();
        let _ = writeln!(out, "weights\t{nnz}");
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                let _ = writeln!(out, "{i}\t{w:e}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SvmError> {
        let total = text.lines().count();
        let mut lines = text.lines().enumerate();
        let err = |line: usize, message: &str| SvmError::Parse {
            line: line + 1,
            message: message.to_string(),
        };
        let mut next_field = |key: &str| -> Result<(usize, String), SvmError> {
            let (i, l) = lines.next().ok_or_else(|| err(total, "truncated file"))?;
            match l.split_once('\t') {
                Some((k, v)) if k == key => Ok((i, v.to_string())),
                _ => Err(err(i, &format!("expected `{key}`"))),
            }
        };
        let (i, version) = next_field("slotfill-svm")?;
        if version != "v1" {
            return Err(err(i, "unsupported version"));
        }
        let (_, slot) = next_field("slot")?;
        let (i, kind) = next_field("feature_kind")?;
        let feature_kind = FeatureKind::parse(&kind).ok_or_else(|| err(i, "bad feature kind"))?;
        let (i, w) = next_field("weighting")?;
        let weighting = Weighting::parse(&w).ok_or_else(|| err(i, "bad weighting"))?;
        let (i, dim) = next_field("dim")?;
        let dim: usize = dim.parse().map_err(|_| err(i, "bad dim"))?;
        let (i, c) = next_field("C")?;
        let c: f64 = c.parse().map_err(|_| err(i, "bad C"))?;
        let (i, seed) = next_field("seed")?;
        let seed: u64 = seed.parse().map_err(|_| err(i, "bad seed"))?;
        let (i, bias) = next_field("bias")?;
        let bias: f64 = bias.parse().map_err(|_| err(i, "bad bias"))?;
        let (i, nnz) = next_field("weights")?;
        let nnz: usize = nnz.parse().map_err(|_| err(i, "bad weight count"))?;
        let mut weights = vec![0.0; dim];
        let mut seen = 0;
        for (i, l) in lines {
            if l.is_empty() {
                continue;
            }
            let (idx, val) = l.split_once('\t').ok_or_else(|| err(i, "expected `index<TAB>weight`"))?;
            let idx: usize = idx.parse().map_err(|_| err(i, "bad index"))?;
            let val: f64 = val.parse().map_err(|_| err(i, "bad weight"))?;
            *weights.get_mut(idx).ok_or_else(|| err(i, "index exceeds dim"))? = val;
            seen += 1;
        }
        if seen != nnz {
            return Err(err(total, "weight count mismatch"));
        }
        Ok(SvmModel {
            slot,
            feature_kind,
            weighting,
            weights,
            bias,
            c,
            seed,
        })
    }
}

pub fn svm_score(model: &SvmModel, x: &SparseVector) -> ModelScore {
    model.score(x)
}

/// Metadata carried into the trained model.
#[derive(Debug, Clone)]
pub struct ModelMeta {
    pub slot: String,
    pub feature_kind: FeatureKind,
    pub weighting: Weighting,
    pub dim: usize,
}

fn primal_objective(examples: &[LabeledVector<'_>], w: &[f64], v: f64, big_b: f64, c: f64) -> f64 {
    let reg = 0.5 * (w.iter().map(|x| x * x).sum::<f64>() + v * v);
    let loss: f64 = examples
        .iter()
        .map(|e| (1.0 - sign(e.y) * (e.x.dot_dense(w) + v * big_b)).max(0.0))
        .sum();
    reg + c * loss
}

pub fn train_svm(
    examples: &[LabeledVector<'_>],
    meta: ModelMeta,
    config: &SvmConfig,
) -> Result<(SvmModel, TrainLog), SvmError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let mut log = TrainLog::default();
    let mut w = vec![0.0; meta.dim];
    let big_b = config.bias_feature;
    // weight of the bias feature; the effective bias is v * B
    let mut v = 0.0;

    let first = examples[0].y;
    if examples.iter().all(|e| e.y == first) {
        // The objective's optimum here is w = 0 with |b| = 1.
        log.warnings.push(format!(
            "slot {}: every training label is {:?}; returning a constant classifier",
            meta.slot, first
        ));
        log.converged = true;
        return Ok((build(meta, w, sign(first), config), log));
    }

    let ys: Vec<f64> = examples.iter().map(|e| sign(e.y)).collect();
    let qd: Vec<f64> = examples
        .iter()
        .map(|e| e.x.squared_norm() + big_b * big_b)
        .collect();
    let mut alpha = vec![0.0; examples.len()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let upper = config.c;

    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        // Starting both ends at 0 keeps an epoch whose projected gradients
        // all agree on a nonzero value from passing as converged.
        let mut pg_max = 0.0f64;
        let mut pg_min = 0.0f64;
        for &i in &order {
            let x = examples[i].x;
            let y = ys[i];
            let g = y * (x.dot_dense(&w) + v * big_b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * y;
                if step != 0.0 {
                    for &(j, v) in x.entries() {
                        w[j] += step * v;
                    }
                    v += step * big_b;
                }
            }
        }
        log.epochs += 1;
        let half_norm = 0.5 * (w.iter().map(|x| x * x).sum::<f64>() + v * v);
        log.dual_objective.push(half_norm - alpha.iter().sum::<f64>());
        log.primal_objective
            .push(primal_objective(examples, &w, v, big_b, config.c));
        if pg_max - pg_min < config.tolerance {
            log.converged = true;
            break;
        }
    }
    if !log.converged {
        log.warnings.push(format!(
            "slot {}: stopped after {} epochs without reaching tolerance {}",
            meta.slot, config.max_epochs, config.tolerance
        ));
    }
    Ok((build(meta, w, v * big_b, config), log))
}

fn build(meta: ModelMeta, weights: Vec<f64>, bias: f64, config: &SvmConfig) -> SvmModel {
    SvmModel {
        slot: meta.slot,
        feature_kind: meta.feature_kind,
        weighting: meta.weighting,
        weights,
        bias,
        c: config.c,
        seed: config.seed,
    }
}

/// Outcome of a C search.
#[derive(Debug, Clone)]
pub struct Tuned {
    pub c: f64,
    pub dev_f1: f64,
    pub model: SvmModel,
    pub log: TrainLog,
    /// `(C, dev F1)` for every grid point, ascending in C.
    pub trace: Vec<(f64, f64)>,
}

/// Picks the C with the best dev F1 at threshold 0.5; ties go to the
/// smaller C.
pub fn tune_c(
    train: &[LabeledVector<'_>],
    dev: &[LabeledVector<'_>],
    meta: ModelMeta,
    base: &SvmConfig,
    grid: &[f64],
) -> Result<Tuned, SvmError> {
    if grid.is_empty() {
        return Err(SvmError::EmptyGrid);
    }
    if dev.is_empty() {
        return Err(SvmError::EmptyDevSet);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<Tuned> = None;
    let mut trace = Vec::with_capacity(sorted.len());
    for c in sorted {
        let config = SvmConfig { c, ..base.clone() };
        let (model, log) = train_svm(train, meta.clone(), &config)?;
        let mut m = SlotMetrics::default();
        for e in dev {
            m.record(e.y, model.score(e.x).decide(ModelScore::THRESHOLD));
        }
        let f1 = m.f1();
        trace.push((c, f1));
        if best.as_ref().is_none_or(|b| f1 > b.dev_f1) {
            best = Some(Tuned {
                c,
                dev_f1: f1,
                model,
                log,
                trace: Vec::new(),
            });
        }
    }
    let mut best = best.expect("grid is non-empty");
    best.trace = trace;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(dim: usize) -> ModelMeta {
        ModelMeta {
            slot: "s".into(),
            feature_kind: FeatureKind::Bow,
            weighting: Weighting::Counts,
            dim,
        }
    }

    fn scalar(x: f64) -> SparseVector {
        SparseVector::from_pairs([(0, x)])
    }

    fn accuracy(model: &SvmModel, data: &[LabeledVector<'_>]) -> f64 {
        let ok = data
            .iter()
            .filter(|e| model.score(e.x).decide(0.5) == e.y)
            .count();
        ok as f64 / data.len() as f64
    }

    #[test]
    fn separable_1d() {
        let (p, n) = (scalar(1.0), scalar(-1.0));
        let data = [
            LabeledVector { x: &p, y: Label::Positive },
            LabeledVector { x: &n, y: Label::Negative },
        ];
        let cfg = SvmConfig { c: 10.0, ..Default::default() };
        let (m, log) = train_svm(&data, meta(1), &cfg).unwrap();
        assert_eq!(accuracy(&m, &data), 1.0);
        assert!(log.converged);
        // hard-margin solution with regularized bias: w = 1, b = 0
        assert!((m.weights[0] - 1.0).abs() < 1e-6);
        assert!(m.bias.abs() < 1e-6);
    }

    #[test]
    fn single_class() {
        let (a, b) = (scalar(1.0), scalar(-3.0));
        let data = [
            LabeledVector { x: &a, y: Label::Positive },
            LabeledVector { x: &b, y: Label::Positive },
        ];
        let (m, log) = train_svm(&data, meta(1), &SvmConfig::default()).unwrap();
        assert_eq!(log.warnings.len(), 1);
        for x in [-100.0, 0.0, 5.0] {
            assert!(m.score(&scalar(x)).is_positive());
        }
    }

    #[test]
    fn contradictory_duplicates() {
        // The objective is symmetric in the sign of w.x + b at the duplicated
        // point; the minimizer is w = b = 0 so both points score 0.5 and the
        // 0.5 threshold labels both positive: exactly one is correct.
        let x = scalar(2.0);
        let data = [
            LabeledVector { x: &x, y: Label::Positive },
            LabeledVector { x: &x, y: Label::Negative },
        ];
        let tight = SvmConfig { tolerance: 1e-12, max_epochs: 10_000, ..Default::default() };
        let (m, _) = train_svm(&data, meta(1), &tight).unwrap();
        assert!(m.margin(&x).abs() < 1e-6, "{}", m.margin(&x));
        assert_eq!(accuracy(&m, &data), 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(
            train_svm(&[], meta(1), &SvmConfig::default()).unwrap_err(),
            SvmError::EmptyTrainingSet
        );
        let x = scalar(1.0);
        let d = [LabeledVector { x: &x, y: Label::Positive }];
        let bad = SvmConfig { c: 0.0, ..Default::default() };
        assert!(matches!(train_svm(&d, meta(1), &bad), Err(SvmError::InvalidConfig(_))));
        assert_eq!(
            tune_c(&d, &[], meta(1), &SvmConfig::default(), &[1.0]).unwrap_err(),
            SvmError::EmptyDevSet
        );
        assert_eq!(
            tune_c(&d, &d, meta(1), &SvmConfig::default(), &[]).unwrap_err(),
            SvmError::EmptyGrid
        );
    }

    #[test]
    fn score_is_logistic_margin() {
        let m = SvmModel {
            slot: "s".into(),
            feature_kind: FeatureKind::Bow,
            weighting: Weighting::Counts,
            weights: vec![0.0, 0.0],
            bias: 0.0,
            c: 1.0,
            seed: 0,
        };
        assert_eq!(m.score(&scalar(3.0)).value(), 0.5);
        let x = SparseVector::from_pairs([(0, 1.0), (1, 1.0)]);
        let mut prev = 0.5;
        for scale in [0.5, 1.0, 2.0, 8.0, 32.0] {
            let mm = SvmModel { weights: vec![scale, 0.0], ..m.clone() };
            let s = mm.score(&x).value();
            assert!(s > prev);
            prev = s;
        }
        let mm = SvmModel { weights: vec![1.0, 2.0], ..m.clone() };
        let (u, v) = (SparseVector::from_pairs([(0, 2.0)]), SparseVector::from_pairs([(1, 1.0)]));
        assert_eq!(mm.score(&u), mm.score(&v));
    }

    fn toy_set(seed: u64, n: usize) -> Vec<(SparseVector, Label)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pos = rng.gen_bool(0.3);
                let mut pairs = vec![(if pos { 0 } else { 1 }, 1.0)];
                for _ in 0..3 {
                    pairs.push((rng.gen_range(2..20), rng.gen_range(0.1..1.0)));
                }
                (SparseVector::from_pairs(pairs), Label::from_bool(pos))
            })
            .collect()
    }

    fn view(d: &[(SparseVector, Label)]) -> Vec<LabeledVector<'_>> {
        d.iter().map(|(x, y)| LabeledVector { x, y: *y }).collect()
    }

    #[test]
    fn dual_objective_never_increases() {
        let raw = toy_set(3, 200);
        let data = view(&raw);
        let cfg = SvmConfig { c: 1.0, tolerance: 1e-8, max_epochs: 50, seed: 1, ..Default::default() };
        let (_, log) = train_svm(&data, meta(20), &cfg).unwrap();
        assert!(log.epochs > 1);
        for w in log.dual_objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_serialization() {
        let raw = toy_set(5, 100);
        let data = view(&raw);
        let cfg = SvmConfig { seed: 42, ..Default::default() };
        let a = train_svm(&data, meta(20), &cfg).unwrap().0.to_text();
        let b = train_svm(&data, meta(20), &cfg).unwrap().0.to_text();
        assert_eq!(a, b);
        let back = SvmModel::from_text(&a).unwrap();
        assert_eq!(back.to_text(), a);
    }

    #[test]
    fn tuning_rules() {
        let raw = toy_set(9, 120);
        let data = view(&raw);
        let dev_raw = toy_set(10, 60);
        let dev = view(&dev_raw);
        let t = tune_c(&data, &dev, meta(20), &SvmConfig::default(), &[0.1]).unwrap();
        assert_eq!(t.c, 0.1);

        // separable data: every grid point reaches F1 = 1, so the smallest wins
        let t = tune_c(&data, &dev, meta(20), &SvmConfig::default(), &[10.0, 1.0, 0.1]).unwrap();
        for &(c, f1) in &t.trace {
            let (m, _) = train_svm(&data, meta(20), &SvmConfig { c, ..Default::default() }).unwrap();
            let mut sm = SlotMetrics::default();
            for e in &dev {
                sm.record(e.y, m.score(e.x).decide(0.5));
            }
            assert_eq!(sm.f1(), f1);
        }
        let best = t.trace.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        assert_eq!(t.dev_f1, best);
        assert_eq!(best, 1.0);
        let first_best = t.trace.iter().find(|p| p.1 == best).unwrap().0;
        assert_eq!(t.c, first_best);
    }

    #[test]
    fn rescaling_keeps_argmax_set() {
        // Scaling x and the bias feature by s and C by 1/s^2 maps dual
        // iterates onto each other (alpha' = alpha / s^2, w' = w / s).
        let raw = toy_set(11, 150);
        let dev_raw = toy_set(12, 80);
        let s = 4.0;
        let scale = |d: &[(SparseVector, Label)]| -> Vec<(SparseVector, Label)> {
            d.iter()
                .map(|(x, y)| {
                    let mut x = x.clone();
                    x.scale(s);
                    (x, *y)
                })
                .collect()
        };
        let (raw_s, dev_s) = (scale(&raw), scale(&dev_raw));
        let grid = [0.01, 0.1, 1.0, 10.0];
        let cfg = SvmConfig { tolerance: 1e-10, max_epochs: 2000, ..Default::default() };
        let a = tune_c(&view(&raw), &view(&dev_raw), meta(20), &cfg, &grid).unwrap();
        let grid_s: Vec<f64> = grid.iter().map(|c| c / (s * s)).collect();
        let cfg_s = SvmConfig { bias_feature: s, ..cfg.clone() };
        let b = tune_c(&view(&raw_s), &view(&dev_s), meta(20), &cfg_s, &grid_s).unwrap();
        let argmax = |t: &Tuned| -> Vec<usize> {
            t.trace.iter().enumerate().filter(|(_, p)| p.1 == t.dev_f1).map(|(i, _)| i).collect()
        };
        assert_eq!(argmax(&a), argmax(&b));
    }
}
