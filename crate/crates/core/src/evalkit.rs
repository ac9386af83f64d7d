//! Per-slot metrics, macro averages, Pearson correlation and the genre-split
//! evaluation matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Genre, Label, RelationInstance, Split};
use crate::seed::{rng_for, sub_seed};
use crate::Classifier;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no prediction for gold instance {index}")]
    MissingPrediction { index: usize },
    #[error("correlation needs two sequences of equal length >= 2 (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("slot {slot} has no {genre} training data")]
    NoGenreData { slot: String, genre: Genre },
    #[error("no model trainers given")]
    NoTrainers,
    #[error("training {model} for slot {slot} failed: {message}")]
    Training {
        model: String,
        slot: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SlotMetrics {
    pub fn record(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
            (Label::Negative, Label::Negative) => {}
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Zero when precision and recall are both zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_slot: BTreeMap<String, SlotMetrics>,
}

impl EvalReport {
    /// Unweighted mean of per-slot F1; zero when there are no slots.
    pub fn macro_f1(&self) -> f64 {
        if self.per_slot.is_empty() {
            return 0.0;
        }
        self.per_slot.values().map(SlotMetrics::f1).sum::<f64>() / self.per_slot.len() as f64
    }

    pub fn slot_f1(&self, slot: &str) -> f64 {
        self.per_slot.get(slot).map_or(0.0, SlotMetrics::f1)
    }
}

/// Scores `(slot, gold, score)` rows at `threshold` (positive iff
/// `score >= threshold`). A `None` score is an error.
pub fn evaluate<'a, I>(rows: I, threshold: f64) -> Result<EvalReport, EvalError>
where
    I: IntoIterator<Item = (&'a str, Label, Option<f64>)>,
{
    let mut report = EvalReport::default();
    for (index, (slot, gold, score)) in rows.into_iter().enumerate() {
        let score = score.ok_or(EvalError::MissingPrediction { index })?;
        report
            .per_slot
            .entry(slot.to_string())
            .or_default()
            .record(gold, Label::from_bool(score >= threshold));
    }
    Ok(report)
}

/// Evaluates parallel slices of gold instances and scores.
pub fn evaluate_instances(
    gold: &[RelationInstance],
    scores: &[f64],
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    if scores.len() < gold.len() {
        return Err(EvalError::MissingPrediction { index: scores.len() });
    }
    evaluate(
        gold.iter()
            .zip(scores)
            .map(|(g, &s)| (g.slot.as_str(), g.label, Some(s))),
        threshold,
    )
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Trains a classifier for one slot from a training set.
pub trait ModelTrainer: Sync {
    fn name(&self) -> &str;
    fn train(
        &self,
        train: &[RelationInstance],
        seed: u64,
    ) -> Result<Box<dyn Classifier + Send + Sync>, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub train: Genre,
    pub test: Genre,
    pub model: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenreMatrix {
    pub cells: BTreeMap<CellKey, EvalReport>,
    /// Per slot, the size shared by WEB and the subsampled news set.
    pub train_sizes: BTreeMap<String, usize>,
}

pub const GENRES: [Genre; 2] = [Genre::News, Genre::Web];
pub const TEST_SPLITS: [Split; 2] = [Split::Dev, Split::Eval];

impl GenreMatrix {
    pub fn f1(&self, train: Genre, test: Genre, model: &str, split: Split) -> Option<f64> {
        self.cells
            .get(&CellKey {
                train,
                test,
                model: model.to_string(),
                split,
            })
            .map(EvalReport::macro_f1)
    }

    pub fn slot_f1(&self, train: Genre, test: Genre, model: &str, split: Split, slot: &str) -> Option<f64> {
        self.cells
            .get(&CellKey {
                train,
                test,
                model: model.to_string(),
                split,
            })
            .map(|r| r.slot_f1(slot))
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.model.as_str()).collect()
    }

    /// Tab-separated report: macro F1 per cell, then per-slot F1.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self
            .train_sizes
            .iter()
            .map(|(s, n)| format!("{s}={n}"))
            .collect();
        let _ = writeln!(out, "# train sets per slot: |WEB| = |NEWS_sub| ({})", sizes.join(", "));
        let _ = writeln!(out, "# F1 is the macro average over slots");
        let _ = writeln!(out, "train\ttest\tmodel\tdev\teval");
        for model in self.models() {
            for train in GENRES {
                for test in GENRES {
                    let cell = |split| {
                        self.f1(train, test, model, split)
                            .map_or("-".to_string(), |f| format!("{f:.4}"))
                    };
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{model}\t{}\t{}",
                        train_label(train),
                        test,
                        cell(Split::Dev),
                        cell(Split::Eval)
                    );
                }
            }
        }
        let _ = writeln!(out, "\nslot\ttrain\ttest\tmodel\tdev\teval");
        for slot in self.train_sizes.keys() {
            for model in self.models() {
                for train in GENRES {
                    for test in GENRES {
                        let cell = |split| {
                            self.slot_f1(train, test, model, split, slot)
                                .map_or("-".to_string(), |f| format!("{f:.4}"))
                        };
                        let _ = writeln!(
                            out,
                            "{slot}\t{}\t{}\t{model}\t{}\t{}",
                            train_label(train),
                            test,
                            cell(Split::Dev),
                            cell(Split::Eval)
                        );
                    }
                }
            }
        }
        out
    }
}

fn train_label(g: Genre) -> &'static str {
    match g {
        Genre::News => "news_sub",
        _ => "web",
    }
}

/// Per slot: trains every model on WEB and on a label-stratified news
/// subsample of the same size, then evaluates on news and web test data of
/// the dev and eval splits.
pub fn genre_matrix(
    instances: &[RelationInstance],
    trainers: &[&dyn ModelTrainer],
    seed: u64,
) -> Result<GenreMatrix, EvalError> {
    if trainers.is_empty() {
        return Err(EvalError::NoTrainers);
    }
    let slots: BTreeSet<&str> = instances
        .iter()
        .filter(|i| i.split == Split::Train)
        .map(|i| i.slot.as_str())
        .collect();

    let mut matrix = GenreMatrix::default();
    let mut train_sets: Vec<(&str, Genre, Vec<RelationInstance>)> = Vec::new();
    for &slot in &slots {
        let of_genre = |g: Genre| -> Vec<RelationInstance> {
            instances
                .iter()
                .filter(|i| i.split == Split::Train && i.slot == slot && i.genre.coarse() == g)
                .cloned()
                .collect()
        };
        let web = of_genre(Genre::Web);
        let news = of_genre(Genre::News);
        for (set, genre) in [(&web, Genre::Web), (&news, Genre::News)] {
            if set.is_empty() {
                return Err(EvalError::NoGenreData {
                    slot: slot.to_string(),
                    genre,
                });
            }
        }
        // news normally outnumbers web; whichever is larger is subsampled
        let size = web.len().min(news.len());
        let mut rng = rng_for(seed, &format!("genre-subsample/{slot}"));
        let mut subsample = |set: Vec<RelationInstance>| -> Vec<RelationInstance> {
            if set.len() == size {
                return set;
            }
            // stratified by label so the class balance survives
            let (pos, neg): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| set[i].label.is_positive());
            let want_pos = ((size * pos.len()) as f64 / set.len() as f64).round() as usize;
            let want_pos = want_pos.clamp(size.saturating_sub(neg.len()), pos.len().min(size));
            let mut picked: Vec<usize> = Vec::with_capacity(size);
            for (class, want) in [(&pos, want_pos), (&neg, size - want_pos)] {
                picked.extend(sample(&mut rng, class.len(), want).into_iter().map(|i| class[i]));
            }
            picked.sort_unstable();
            picked.into_iter().map(|i| set[i].clone()).collect()
        };
        let news_sub = subsample(news);
        let web = subsample(web);
        matrix.train_sizes.insert(slot.to_string(), size);
        train_sets.push((slot, Genre::News, news_sub));
        train_sets.push((slot, Genre::Web, web));
    }

    let jobs: Vec<(usize, usize)> = (0..train_sets.len())
        .flat_map(|s| (0..trainers.len()).map(move |t| (s, t)))
        .collect();
    type ScoredCell = (CellKey, String, Vec<(Label, f64)>);
    let results: Vec<Result<Vec<ScoredCell>, EvalError>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let (slot, train_genre, set) = &train_sets[s];
            let trainer = trainers[t];
            let job_seed = sub_seed(seed, &format!("{}/{slot}/{train_genre}", trainer.name()));
            let model = trainer.train(set, job_seed).map_err(|message| EvalError::Training {
                model: trainer.name().to_string(),
                slot: slot.to_string(),
                message,
            })?;
            let mut cells = Vec::new();
            for test in GENRES {
                for split in TEST_SPLITS {
                    let scored: Vec<(Label, f64)> = instances
                        .iter()
                        .filter(|i| i.split == split && i.slot == *slot && i.genre.coarse() == test)
                        .map(|i| (i.label, model.score(i).value()))
                        .collect();
                    let key = CellKey {
                        train: *train_genre,
                        test,
                        model: trainer.name().to_string(),
                        split,
                    };
                    cells.push((key, slot.to_string(), scored));
                }
            }
            Ok(cells)
        })
        .collect();

    for r in results {
        for (key, slot, scored) in r? {
            let report = matrix.cells.entry(key).or_default();
            let m = report.per_slot.entry(slot).or_default();
            for (gold, score) in scored {
                m.record(gold, Label::from_bool(score >= crate::ModelScore::THRESHOLD));
            }
        }
    }
    Ok(matrix)
}
