use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use super::Run;
use crate::corpus::{load_embeddings, EmbeddingTable, RelationInstance, Vocabulary};
use crate::evalkit::ModelTrainer;
use crate::features::{featurize, FeatureKind, FeatureSpace, SparseVector, Weighting};
use crate::neural::{train_cnn, Activation, CnnConfig, CnnModel, Variant};
use crate::patterns::PatternSet;
use crate::seed::sub_seed;
use crate::svm::{train_svm, tune_c, LabeledVector, ModelMeta, SvmConfig, SvmModel, DEFAULT_C_GRID};
use crate::{Classifier, ModelScore};

pub const INDEX_FILE: &str = "model.txt";
pub const PATTERN_FILE: &str = "patterns.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    Pat,
    SvmBow,
    SvmSkip,
    CnnContext,
    CnnPiece,
    CnnPieceExt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Pat,
        ModelKind::SvmBow,
        ModelKind::SvmSkip,
        ModelKind::CnnContext,
        ModelKind::CnnPiece,
        ModelKind::CnnPieceExt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pat => "pat",
            ModelKind::SvmBow => "svm-bow",
            ModelKind::SvmSkip => "svm-skip",
            ModelKind::CnnContext => "cnn-context",
            ModelKind::CnnPiece => "cnn-piece",
            ModelKind::CnnPieceExt => "cnn-piece-ext",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            anyhow!("unknown model `{s}` (expected one of {})", names.join(", "))
        })
    }

    fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            ModelKind::SvmBow => Some(FeatureKind::Bow),
            ModelKind::SvmSkip => Some(FeatureKind::Skip),
            _ => None,
        }
    }

    fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::CnnContext => Some(Variant::Contextwise),
            ModelKind::CnnPiece => Some(Variant::Piecewise),
            ModelKind::CnnPieceExt => Some(Variant::PiecewiseExt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmSettings {
    pub kind: FeatureKind,
    pub c_grid: Vec<f64>,
    pub weighting: Weighting,
    pub base: SvmConfig,
}

#[derive(Debug, Clone)]
pub struct CnnSettings {
    pub config: CnnConfig,
    /// Contents of a word2vec-style embedding file.
    pub embeddings: Option<String>,
}

/// Everything needed to train one model kind, resolved from settings.
#[derive(Debug, Clone)]
pub enum ModelSettings {
    Pat(PatternSet),
    Svm(SvmSettings),
    Cnn(CnnSettings),
}

fn parse_weighting(s: &str) -> Result<Weighting> {
    Weighting::parse(s).ok_or_else(|| anyhow!("unknown weighting `{s}`"))
}

impl ModelSettings {
    /// With `tune_c` the SVM C is chosen on dev from `c_grid`; otherwise the
    /// single value `c` is used.
    pub fn resolve(
        kind: ModelKind,
        run: &mut Run,
        patterns: Option<&Path>,
        tune_c: bool,
    ) -> Result<Self> {
        if kind == ModelKind::Pat {
            let path = patterns.ok_or_else(|| anyhow!("`pat` needs --patterns <file>"))?;
            let text = run.read(path)?;
            let mut set = PatternSet::parse(&text).with_context(|| format!("in {}", path.display()))?;
            set.gap = run.settings.get("pattern_gap", set.gap)?;
            return Ok(ModelSettings::Pat(set));
        }
        if let Some(fk) = kind.feature_kind() {
            let s = &mut run.settings;
            let defaults = SvmConfig::default();
            let c_grid = if tune_c {
                s.get_list("c_grid", &DEFAULT_C_GRID)?
            } else {
                vec![s.get("c", defaults.c)?]
            };
            if c_grid.is_empty() {
                bail!("empty C grid");
            }
            let weighting = parse_weighting(&s.get("weighting", Weighting::default().as_str().to_string())?)?;
            let base = SvmConfig {
                tolerance: s.get("tolerance", defaults.tolerance)?,
                max_epochs: s.get("max_epochs", defaults.max_epochs)?,
                bias_feature: s.get("bias_feature", defaults.bias_feature)?,
                ..defaults
            };
            return Ok(ModelSettings::Svm(SvmSettings {
                kind: fk,
                c_grid,
                weighting,
                base,
            }));
        }
        let variant = kind.variant().expect("remaining kinds are CNNs");
        let d = CnnConfig::with_variant(variant);
        let s = &mut run.settings;
        let activation = s.get("activation", d.activation.as_str().to_string())?;
        let config = CnnConfig {
            variant,
            n_filters: s.get("n_filters", d.n_filters)?,
            width: s.get("width", d.width)?,
            k: s.get("k", d.k)?,
            hidden: s.get("hidden", d.hidden)?,
            dim: s.get("dim", d.dim)?,
            learning_rate: s.get("learning_rate", d.learning_rate)?,
            epochs: s.get("epochs", d.epochs)?,
            batch_size: s.get("batch_size", d.batch_size)?,
            finetune_embeddings: s.get("finetune_embeddings", d.finetune_embeddings)?,
            activation: Activation::parse(&activation).ok_or_else(|| anyhow!("unknown activation `{activation}`"))?,
            seed: 0,
        };
        config.validate()?;
        let embeddings = match s.get_opt("embeddings") {
            Some(path) => Some(run.read(Path::new(&path))?),
            None => None,
        };
        Ok(ModelSettings::Cnn(CnnSettings { config, embeddings }))
    }
}

/// A trained classifier for one slot.
#[derive(Debug, Clone)]
pub enum SlotModel {
    Pat(PatternSet),
    Svm { model: SvmModel, space: FeatureSpace },
    Cnn(CnnModel),
}

impl Classifier for SlotModel {
    fn score(&self, instance: &RelationInstance) -> ModelScore {
        match self {
            SlotModel::Pat(set) => set.classify(instance),
            SlotModel::Svm { model, space } => {
                model.score(&featurize(model.feature_kind, instance, space, model.weighting))
            }
            SlotModel::Cnn(m) => m.forward(instance),
        }
    }
}

pub struct TrainedSlot {
    pub model: SlotModel,
    /// Human-readable training log lines.
    pub log: Vec<String>,
}

fn labeled<'a>(xs: &'a [SparseVector], data: &[RelationInstance]) -> Vec<LabeledVector<'a>> {
    xs.iter().zip(data).map(|(x, i)| LabeledVector { x, y: i.label }).collect()
}

/// Trains the model for `slot`. `dev` is used to pick the SVM C.
pub fn train_slot(
    settings: &ModelSettings,
    slot: &str,
    train: &[RelationInstance],
    dev: &[RelationInstance],
    seed: u64,
) -> Result<TrainedSlot> {
    if train.is_empty() {
        bail!("no training data for {slot}");
    }
    match settings {
        ModelSettings::Pat(set) => Ok(TrainedSlot {
            model: SlotModel::Pat(set.clone()),
            log: vec![format!("{slot}: {} patterns", set.patterns(slot).len())],
        }),
        ModelSettings::Svm(svm) => {
            let space = FeatureSpace::fit(svm.kind, train);
            let vectorize = |data: &[RelationInstance]| -> Vec<_> {
                data.iter().map(|i| featurize(svm.kind, i, &space, svm.weighting)).collect()
            };
            let (xs, dev_xs) = (vectorize(train), vectorize(dev));
            let (train_l, dev_l) = (labeled(&xs, train), labeled(&dev_xs, dev));
            let meta = ModelMeta {
                slot: slot.to_string(),
                feature_kind: svm.kind,
                weighting: svm.weighting,
                dim: space.len(),
            };
            let base = SvmConfig { seed, ..svm.base.clone() };
            let mut log = Vec::new();
            let (model, train_log) = if svm.c_grid.len() == 1 {
                train_svm(&train_l, meta, &SvmConfig { c: svm.c_grid[0], ..base })?
            } else {
                let tuned = tune_c(&train_l, &dev_l, meta, &base, &svm.c_grid)?;
                for (c, f1) in &tuned.trace {
                    log.push(format!("{slot}: C={c} dev_f1={f1:.4}"));
                }
                (tuned.model, tuned.log)
            };
            log.push(format!(
                "{slot}: C={} epochs={} converged={} dual_objective={:e}",
                model.c,
                train_log.epochs,
                train_log.converged,
                train_log.dual_objective.last().copied().unwrap_or(0.0)
            ));
            log.extend(train_log.warnings.iter().cloned());
            Ok(TrainedSlot {
                model: SlotModel::Svm { model, space },
                log,
            })
        }
        ModelSettings::Cnn(cnn) => {
            let vocab = Vocabulary::from_instances(train);
            let config = CnnConfig {
                seed,
                ..cnn.config.clone()
            };
            let emb_seed = sub_seed(seed, "embeddings");
            let embeddings = match &cnn.embeddings {
                Some(text) => load_embeddings(text, &vocab, emb_seed)?,
                None => EmbeddingTable::random(&vocab, config.dim, emb_seed),
            };
            let (model, train_log) = train_cnn(train, &config, vocab, embeddings)?;
            let log = train_log
                .epoch_loss
                .iter()
                .enumerate()
                .map(|(e, l)| format!("{slot}: epoch {} loss={l:e}", e + 1))
                .collect();
            Ok(TrainedSlot {
                model: SlotModel::Cnn(model),
                log,
            })
        }
    }
}

/// File-name stem for a slot id.
pub fn sanitize(slot: &str) -> String {
    slot.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes the per-slot models and the index file into the run's output.
pub fn save_models(run: &mut Run, kind: ModelKind, models: &BTreeMap<String, SlotModel>) -> Result<()> {
    let mut index = format!("model\t{}\n", kind.name());
    let mut stems = BTreeSet::new();
    if let Some(SlotModel::Pat(set)) = models.values().next() {
        run.write(PATTERN_FILE, &set.to_text())?;
    }
    for (slot, model) in models {
        let stem = sanitize(slot);
        if !stems.insert(stem.clone()) {
            bail!("slots map to the same file name `{stem}`");
        }
        let _ = writeln!(index, "slot\t{slot}\t{stem}");
        match model {
            SlotModel::Pat(_) => {}
            SlotModel::Svm { model, space } => {
                run.write(&format!("{stem}.svm"), &model.to_text())?;
                run.write(&format!("{stem}.features"), &space.dump())?;
            }
            SlotModel::Cnn(m) => run.write(&format!("{stem}.cnn"), &m.to_text())?,
        }
    }
    run.write(INDEX_FILE, &index)
}

/// Loads a model directory written by [`save_models`].
pub fn load_models(run: &mut Run, dir: &Path) -> Result<(ModelKind, BTreeMap<String, SlotModel>)> {
    let index = run.read(&dir.join(INDEX_FILE))?;
    let mut lines = index.lines();
    let kind = match lines.next().and_then(|l| l.split_once('\t')) {
        Some(("model", name)) => ModelKind::parse(name)?,
        _ => bail!("{}: missing `model` line", dir.join(INDEX_FILE).display()),
    };
    let patterns = if kind == ModelKind::Pat {
        Some(PatternSet::parse(&run.read(&dir.join(PATTERN_FILE))?)?)
    } else {
        None
    };
    let mut models = BTreeMap::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let [_, slot, stem] = f[..] else {
            bail!("{}: bad line `{line}`", dir.join(INDEX_FILE).display());
        };
        let ctx = |what: &str| format!("loading {what} for {slot}");
        let model = match kind {
            ModelKind::Pat => SlotModel::Pat(patterns.clone().expect("read above")),
            ModelKind::SvmBow | ModelKind::SvmSkip => SlotModel::Svm {
                model: SvmModel::from_text(&run.read(&dir.join(format!("{stem}.svm")))?).with_context(|| ctx("SVM"))?,
                space: FeatureSpace::from_dump(&run.read(&dir.join(format!("{stem}.features")))?)
                    .map_err(|e| anyhow!(e))
                    .with_context(|| ctx("feature space"))?,
            },
            _ => SlotModel::Cnn(
                CnnModel::from_text(&run.read(&dir.join(format!("{stem}.cnn")))?).with_context(|| ctx("CNN"))?,
            ),
        };
        models.insert(slot.to_string(), model);
    }
    Ok((kind, models))
}

/// Adapter for the genre experiment, which trains from a training set alone.
pub struct KindTrainer {
    pub kind: ModelKind,
    pub settings: ModelSettings,
}

impl ModelTrainer for KindTrainer {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn train(
        &self,
        train: &[RelationInstance],
        seed: u64,
    ) -> std::result::Result<Box<dyn Classifier + Send + Sync>, String> {
        let slot = train.first().map(|i| i.slot.clone()).unwrap_or_default();
        train_slot(&self.settings, &slot, train, &[], seed)
            .map(|t| Box::new(t.model) as Box<dyn Classifier + Send + Sync>)
            .map_err(|e| format!("{e:#}"))
    }
}
