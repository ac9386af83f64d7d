//! Linear interpolation of model scores with weights searched on a simplex
//! lattice.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Label;
use crate::evalkit::SlotMetrics;
use crate::ModelScore;

pub const DEFAULT_STEP: f64 = 0.1;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CombineError {
    #[error("weights must lie in [0, 1] and sum to 1, got {0:?}")]
    InvalidWeights(Vec<f64>),
    #[error("weight {weight} is not a multiple of step {step}")]
    OffLattice { weight: f64, step: f64 },
    #[error("step {0} does not divide 1 evenly")]
    BadStep(f64),
    #[error("{scores} scores for {weights} weights")]
    Arity { scores: usize, weights: usize },
    #[error("empty dev table")]
    EmptyTable,
    #[error("need at least one model column")]
    NoModels,
    #[error("score table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("score tables disagree: {0}")]
    Mismatch(String),
}

/// Number of lattice cells per unit weight, e.g. 10 for step 0.1.
pub fn resolution(step: f64) -> Result<u32, CombineError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CombineError::BadStep(step));
    }
    let r = (1.0 / step).round();
    if (r * step - 1.0).abs() > SUM_TOLERANCE {
        return Err(CombineError::BadStep(step));
    }
    Ok(r as u32)
}

/// Interpolation weights stored as integer multiples of `1 / resolution`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CombinationWeights {
    units: Vec<u32>,
    resolution: u32,
}

impl CombinationWeights {
    pub fn new(alphas: &[f64], step: f64) -> Result<Self, CombineError> {
        validate_alphas(alphas)?;
        let resolution = resolution(step)?;
        let mut units = Vec::with_capacity(alphas.len());
        for &a in alphas {
            let u = (a * resolution as f64).round();
            if (u / resolution as f64 - a).abs() > SUM_TOLERANCE {
                return Err(CombineError::OffLattice { weight: a, step });
            }
            units.push(u as u32);
        }
        Ok(CombinationWeights { units, resolution })
    }

    fn from_units(units: Vec<u32>, resolution: u32) -> Self {
        debug_assert_eq!(units.iter().sum::<u32>(), resolution);
        CombinationWeights { units, resolution }
    }

    /// All weight on model `index`.
    pub fn one_hot(n_models: usize, index: usize, step: f64) -> Result<Self, CombineError> {
        let resolution = resolution(step)?;
        let mut units = vec![0; n_models];
        units[index] = resolution;
        Ok(Self::from_units(units, resolution))
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|&u| u as f64 / self.resolution as f64)
            .collect()
    }

    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn apply(&self, scores: &[f64]) -> Result<ModelScore, CombineError> {
        combine(scores, &self.alphas())
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<(), CombineError> {
    let sum: f64 = alphas.iter().sum();
    if alphas.is_empty()
        || alphas.iter().any(|a| !(0.0..=1.0).contains(a))
        || (sum - 1.0).abs() > SUM_TOLERANCE
    {
        return Err(CombineError::InvalidWeights(alphas.to_vec()));
    }
    Ok(())
}

/// `sum_m alpha_m * q_m` for weights on the probability simplex.
pub fn combine(scores: &[f64], alphas: &[f64]) -> Result<ModelScore, CombineError> {
    if scores.len() != alphas.len() {
        return Err(CombineError::Arity {
            scores: scores.len(),
            weights: alphas.len(),
        });
    }
    validate_alphas(alphas)?;
    let q: f64 = alphas.iter().zip(scores).map(|(a, q)| a * q).sum();
    // rounding can push a convex combination of 1.0s a hair past 1
    Ok(ModelScore::new(q.clamp(0.0, 1.0)).expect("clamped"))
}

/// Every non-negative integer vector of length `n_models` summing to
/// `resolution`, in descending lexicographic order.
pub fn lattice(n_models: usize, resolution: u32) -> Vec<Vec<u32>> {
    fn rec(left: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for u in (0..=left).rev() {
            prefix.push(u);
            rec(left - u, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n_models > 0 {
        rec(resolution, n_models, &mut Vec::with_capacity(n_models), &mut out);
    }
    out
}

/// One dev row for a single slot: gold label and one score per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub gold: Label,
    pub scores: Vec<f64>,
}

fn f1_at(rows: &[ScoredRow], alphas: &[f64]) -> f64 {
    let mut m = SlotMetrics::default();
    for r in rows {
        let q: f64 = alphas.iter().zip(&r.scores).map(|(a, q)| a * q).sum();
        m.record(r.gold, Label::from_bool(q >= ModelScore::THRESHOLD));
    }
    m.f1()
}

/// Best lattice point by dev F1. Ties go to the lexicographically largest
/// weight vector, so earlier models win ties.
pub fn grid_search(rows: &[ScoredRow], step: f64) -> Result<(CombinationWeights, f64), CombineError> {
    if rows.is_empty() {
        return Err(CombineError::EmptyTable);
    }
    let n_models = rows[0].scores.len();
    if n_models == 0 {
        return Err(CombineError::NoModels);
    }
    if let Some(r) = rows.iter().find(|r| r.scores.len() != n_models) {
        return Err(CombineError::Arity {
            scores: r.scores.len(),
            weights: n_models,
        });
    }
    let res = resolution(step)?;
    let points = lattice(n_models, res);
    let f1s: Vec<f64> = points
        .par_iter()
        .map(|u| {
            let alphas: Vec<f64> = u.iter().map(|&x| x as f64 / res as f64).collect();
            f1_at(rows, &alphas)
        })
        .collect();
    let mut best = 0;
    for (i, &f) in f1s.iter().enumerate() {
        if f > f1s[best] {
            best = i;
        }
    }
    Ok((
        CombinationWeights::from_units(points[best].clone(), res),
        f1s[best],
    ))
}

/// Model scores for a set of instances, one column per model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub models: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub slot: String,
    pub gold: Label,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn new(models: Vec<String>) -> Self {
        ScoreTable {
            models,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, slot: &str, gold: Label, scores: Vec<f64>) {
        assert_eq!(scores.len(), self.models.len(), "score arity");
        self.rows.push(TableRow {
            slot: slot.to_string(),
            gold,
            scores,
        });
    }

    /// Header `slot gold <model>...`, then one tab-separated row per instance.
    pub fn to_text(&self) -> String {
        let mut out = format!("slot\tgold\t{}\n", self.models.join("\t"));
        for r in &self.rows {
            let _ = write!(out, "{}\t{}", r.slot, r.gold.as_digit());
            for s in &r.scores {
                let _ = write!(out, "\t{s:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CombineError> {
        let err = |line: usize, message: String| CombineError::Parse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() < 3 || cols[0] != "slot" || cols[1] != "gold" {
            return Err(err(1, "header must be `slot<TAB>gold<TAB>model...`".into()));
        }
        let mut table = ScoreTable::new(cols[2..].iter().map(|s| s.to_string()).collect());
        for (i, l) in lines {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != cols.len() {
                return Err(err(i + 1, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let gold = match f[1] {
                "1" => Label::Positive,
                "0" => Label::Negative,
                g => return Err(err(i + 1, format!("bad gold label `{g}`"))),
            };
            let mut scores = Vec::with_capacity(f.len() - 2);
            for s in &f[2..] {
                let v: f64 = s.parse().map_err(|_| err(i + 1, format!("bad score `{s}`")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(err(i + 1, format!("score {v} outside [0, 1]")));
                }
                scores.push(v);
            }
            table.push(f[0], gold, scores);
        }
        Ok(table)
    }

    /// Column-wise join of tables over identical instance lists.
    pub fn merge(tables: &[ScoreTable]) -> Result<Self, CombineError> {
        let first = tables.first().ok_or(CombineError::NoModels)?;
        let mut models = Vec::new();
        for t in tables {
            if t.rows.len() != first.rows.len() {
                return Err(CombineError::Mismatch(format!(
                    "{} rows vs {} rows",
                    t.rows.len(),
                    first.rows.len()
                )));
            }
            for m in &t.models {
                let mut name = m.clone();
                let mut k = 2;
                while models.contains(&name) {
                    name = format!("{m}#{k}");
                    k += 1;
                }
                models.push(name);
            }
        }
        let mut merged = ScoreTable::new(models);
        for (i, r) in first.rows.iter().enumerate() {
            let mut scores = Vec::with_capacity(merged.models.len());
            for t in tables {
                let o = &t.rows[i];
                if o.slot != r.slot || o.gold != r.gold {
                    return Err(CombineError::Mismatch(format!("row {} differs in slot or gold label", i + 1)));
                }
                scores.extend_from_slice(&o.scores);
            }
            merged.push(&r.slot, r.gold, scores);
        }
        Ok(merged)
    }

    pub fn slot_rows(&self) -> BTreeMap<&str, Vec<ScoredRow>> {
        let mut out: BTreeMap<&str, Vec<ScoredRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.slot.as_str()).or_default().push(ScoredRow {
                gold: r.gold,
                scores: r.scores.clone(),
            });
        }
        out
    }
}

/// Grid search run separately for every slot of the table.
pub fn grid_search_per_slot(
    table: &ScoreTable,
    step: f64,
) -> Result<BTreeMap<String, (CombinationWeights, f64)>, CombineError> {
    if table.models.is_empty() {
        return Err(CombineError::NoModels);
    }
    table
        .slot_rows()
        .into_iter()
        .map(|(slot, rows)| grid_search(&rows, step).map(|r| (slot.to_string(), r)))
        .collect()
}

/// For each model, how many slots selected each lattice weight.
pub fn weight_histogram(
    per_slot: &BTreeMap<String, CombinationWeights>,
    n_models: usize,
    step: f64,
) -> Result<Vec<BTreeMap<u32, usize>>, CombineError> {
    let res = resolution(step)?;
    let mut hist: Vec<BTreeMap<u32, usize>> = (0..n_models)
        .map(|_| (0..=res).map(|u| (u, 0)).collect())
        .collect();
    for w in per_slot.values() {
        if w.len() != n_models || w.resolution() != res {
            return Err(CombineError::Arity {
                scores: n_models,
                weights: w.len(),
            });
        }
        for (m, &u) in w.units().iter().enumerate() {
            *hist[m].entry(u).or_default() += 1;
        }
    }
    Ok(hist)
}

pub fn histogram_text(models: &[String], hist: &[BTreeMap<u32, usize>], step: f64) -> Result<String, CombineError> {
    let res = resolution(step)?;
    let mut out = String::from("model\tweight\tcount\n");
    for (name, h) in models.iter().zip(hist) {
        for (u, c) in h {
            let _ = writeln!(out, "{name}\t{:.prec$}\t{c}", *u as f64 / res as f64, prec = decimals(res));
        }
    }
    Ok(out)
}

fn decimals(res: u32) -> usize {
    let mut d = 0;
    let mut r = res;
    while r > 1 {
        r = r.div_ceil(10);
        d += 1;
    }
    d.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(&[0.3, 0.9, 0.1], &[1.0, 0.0, 0.0]).unwrap().value(), 0.3);
        assert!((combine(&[0.4, 0.8], &[0.5, 0.5]).unwrap().value() - 0.6).abs() < 1e-15);
        assert!(matches!(combine(&[0.4, 0.8], &[0.4, 0.4]), Err(CombineError::InvalidWeights(_))));
        assert!(matches!(CombinationWeights::new(&[0.4, 0.4], 0.1), Err(CombineError::InvalidWeights(_))));
        assert!(matches!(CombinationWeights::new(&[0.35, 0.65], 0.1), Err(CombineError::OffLattice { .. })));
        assert!(matches!(combine(&[0.4], &[0.5, 0.5]), Err(CombineError::Arity { .. })));
    }

    #[test]
    fn step_must_divide_one() {
        assert_eq!(resolution(0.1).unwrap(), 10);
        assert_eq!(resolution(0.25).unwrap(), 4);
        assert_eq!(resolution(0.3), Err(CombineError::BadStep(0.3)));
        assert_eq!(resolution(0.0), Err(CombineError::BadStep(0.0)));
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(lattice(3, 10).len(), 66);
        assert_eq!(lattice(1, 10), vec![vec![10]]);
        let two = lattice(2, 10);
        assert_eq!(two.len(), 11);
        assert_eq!(two[0], vec![10, 0]);
        assert_eq!(two[10], vec![0, 10]);
        for m in 1..=4usize {
            for s in 1..=10u32 {
                // brute force over the full cube
                let mut count = 0;
                let mut v = vec![0u32; m];
                loop {
                    if v.iter().sum::<u32>() == s {
                        count += 1;
                    }
                    let mut k = 0;
                    while k < m {
                        v[k] += 1;
                        if v[k] <= s {
                            break;
                        }
                        v[k] = 0;
                        k += 1;
                    }
                    if k == m {
                        break;
                    }
                }
                assert_eq!(lattice(m, s).len(), count);
                assert_eq!(count as u64, binom(s as u64 + m as u64 - 1, m as u64 - 1));
            }
        }
    }

    #[test]
    fn single_model_grid() {
        let rows = vec![ScoredRow { gold: Label::Positive, scores: vec![0.2] }];
        let (w, _) = grid_search(&rows, 0.1).unwrap();
        assert_eq!(w.alphas(), vec![1.0]);
        assert_eq!(grid_search(&[], 0.1), Err(CombineError::EmptyTable));
    }

    #[test]
    fn perfect_model_wins() {
        // model 1 is perfect; model 2 is noise
        let noise = [0.9, 0.1, 0.8, 0.3, 0.6, 0.2, 0.7, 0.95, 0.05, 0.4];
        let rows: Vec<ScoredRow> = (0..10)
            .map(|i| {
                let pos = i % 3 == 0;
                ScoredRow {
                    gold: Label::from_bool(pos),
                    scores: vec![if pos { 0.9 } else { 0.1 }, noise[i]],
                }
            })
            .collect();
        // enumerate the 11 points independently and find the best F1
        let mut best_f1 = -1.0;
        let mut best_alpha = 0.0;
        for u in (0..=10).rev() {
            let a = u as f64 / 10.0;
            let mut m = SlotMetrics::default();
            for r in &rows {
                m.record(r.gold, Label::from_bool(a * r.scores[0] + (1.0 - a) * r.scores[1] >= 0.5));
            }
            if m.f1() > best_f1 {
                best_f1 = m.f1();
                best_alpha = a;
            }
        }
        let (w, f1) = grid_search(&rows, 0.1).unwrap();
        assert_eq!(f1, 1.0);
        assert_eq!(best_f1, 1.0);
        assert_eq!(w.alphas()[0], best_alpha);
        assert_eq!(w.alphas(), vec![1.0, 0.0]);
    }

    #[test]
    fn histogram_partitions_slots() {
        let mut per_slot = BTreeMap::new();
        for i in 0..24 {
            per_slot.insert(format!("s{i}"), CombinationWeights::new(&[0.5, 0.5, 0.0], 0.1).unwrap());
        }
        let h = weight_histogram(&per_slot, 3, 0.1).unwrap();
        assert_eq!(h[2][&0], 24);
        assert_eq!(h[0][&5], 24);
        for model in &h {
            assert_eq!(model.values().sum::<usize>(), 24);
        }
        let text = histogram_text(&["a".into(), "b".into(), "c".into()], &h, 0.1).unwrap();
        assert!(text.contains("c\t0.0\t24\n"));
        assert!(text.contains("a\t0.5\t24\n"));
    }

    #[test]
    fn table_roundtrip_and_merge() {
        let mut a = ScoreTable::new(vec!["pat".into()]);
        a.push("s", Label::Positive, vec![1.0]);
        a.push("t", Label::Negative, vec![0.25]);
        let parsed = ScoreTable::parse(&a.to_text()).unwrap();
        assert_eq!(parsed, a);
        let m = ScoreTable::merge(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(m.models, vec!["pat", "pat#2"]);
        assert_eq!(m.rows[1].scores, vec![0.25, 0.25]);
        let mut b = a.clone();
        b.rows[0].gold = Label::Negative;
        assert!(matches!(ScoreTable::merge(&[a.clone(), b]), Err(CombineError::Mismatch(_))));
        assert!(matches!(ScoreTable::parse("slot\tgold\tm\ns\t1\t1.5\n"), Err(CombineError::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn dev_dominance(rows in proptest::collection::vec((any::<bool>(), proptest::collection::vec(0.0f64..1.0, 3)), 1..40)) {
            let rows: Vec<ScoredRow> = rows.into_iter().map(|(g, s)| ScoredRow { gold: Label::from_bool(g), scores: s }).collect();
            let (_, best) = grid_search(&rows, 0.1).unwrap();
            for m in 0..3 {
                let mut metrics = SlotMetrics::default();
                for r in &rows {
                    metrics.record(r.gold, Label::from_bool(r.scores[m] >= 0.5));
                }
                prop_assert!(best >= metrics.f1());
            }
        }

        #[test]
        fn combine_monotone(q in proptest::collection::vec(0.0f64..1.0, 3), bump in 0.0f64..0.5, which in 0usize..3,
                            w in proptest::sample::select(lattice(3, 10))) {
            let a: Vec<f64> = w.iter().map(|&u| u as f64 / 10.0).collect();
            let base = combine(&q, &a).unwrap().value();
            let mut q2 = q.clone();
            q2[which] = (q2[which] + bump).min(1.0);
            prop_assert!(combine(&q2, &a).unwrap().value() >= base);
        }
    }
}
