//! The `slotfill` command line.
//!
//! Every command reads its inputs, resolves its settings (config file, then
//! `--set` and dedicated flags) and writes into `--out`. Besides its own
//! outputs each run leaves `config.txt`, the fully resolved settings, and
//! `manifest.tsv`, which lists status, warnings, errors and the SHA-256 of
//! every input and output file. Nothing time- or host-dependent is ever
//! written, so identical inputs and seed give identical output trees.

mod evaluate;
mod gen_data;
mod models;
mod settings;
mod train;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::corpus::{parse_instances, RelationInstance, Split};

pub use models::{load_models, sanitize, ModelKind, SlotModel};
pub use settings::{parse_config, parse_list, Settings};

#[derive(Debug, Parser)]
#[command(name = "slotfill", version, about = "Relation classifiers for slot filling")]
pub struct Cli {
    /// Root seed; every random stream is derived from it by name.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// File of `key = value` settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override a setting; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Decision threshold on the positive-class score.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a distantly supervised corpus from a KB and templates.
    GenData {
        /// `subject<TAB>relation<TAB>object<TAB>type` lines; a demo KB when absent.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// `slot<TAB>genre<TAB>template` lines; demo templates when absent.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Train one model per slot.
    Train {
        /// pat, svm-bow, svm-skip, cnn-context, cnn-piece or cnn-piece-ext.
        #[arg(long)]
        model: String,
        /// Directory with train.tsv and, optionally, dev.tsv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        patterns: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score dev and eval data with trained models.
    #[command(alias = "score")]
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        /// Directory with dev.tsv and/or eval.tsv.
        #[arg(long)]
        data: PathBuf,
    },
    /// Interpolate the scores of several evaluated models.
    Combine {
        /// Directories written by `eval` (at least two).
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
    },
    /// Grid-search hyperparameters per slot on dev.
    Tune {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// `key = v1, v2, ...` lines.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        patterns: Option<PathBuf>,
    },
    /// Train on news and web separately and test on both.
    GenreMatrix {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated model names.
        #[arg(long)]
        model: String,
        #[arg(long)]
        patterns: Option<PathBuf>,
    },
    /// Correlate component F1 with end-to-end F1.
    Correlate {
        /// `report.tsv` files written by `eval` or `combine`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// `config_name<TAB>end_to_end_f1` lines, one per report, same order.
        #[arg(long)]
        end_to_end: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Combine { .. } => "combine",
            Command::Tune { .. } => "tune",
            Command::GenreMatrix { .. } => "genre-matrix",
            Command::Correlate { .. } => "correlate",
        }
    }
}

/// State of one command execution.
pub struct Run {
    out: PathBuf,
    pub settings: Settings,
    pub seed: u64,
    pub threshold: f64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    warnings: Vec<String>,
    errors: Vec<String>,
}

impl Run {
    pub fn warn(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::warn!("{m}");
        self.warnings.push(m);
    }

    pub fn error(&mut self, message: impl Into<String>) {
        let m = message.into();
        log::error!("{m}");
        self.errors.push(m);
    }

    /// Reads an input file and records its hash.
    pub fn read(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    /// Writes `contents` to `name` inside the output directory.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Records a file written into the output directory by other means.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.out.join(name)).with_context(|| format!("hashing {name}"))?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Parses an instance file, naming it in errors.
    pub fn read_instances(&mut self, path: &Path) -> Result<Vec<RelationInstance>> {
        let text = self.read(path)?;
        parse_instances(&text).with_context(|| format!("in {}", path.display()))
    }

    /// `<dir>/<split>.tsv` when present.
    pub fn read_split(&mut self, dir: &Path, split: Split) -> Result<Option<Vec<RelationInstance>>> {
        let path = split_path(dir, split);
        if !path.exists() {
            return Ok(None);
        }
        self.read_instances(&path).map(Some)
    }

    fn manifest(&self, command: &str, fatal: Option<&anyhow::Error>) -> String {
        let status = if fatal.is_some() {
            "failed"
        } else if self.errors.is_empty() {
            "ok"
        } else {
            "partial"
        };
        let mut out = format!("command\t{command}\nstatus\t{status}\nseed\t{}\n", self.seed);
        if let Some(e) = fatal {
            let _ = writeln!(out, "error\t{}", one_line(&format!("{e:#}")));
        }
        for e in &self.errors {
            let _ = writeln!(out, "error\t{}", one_line(e));
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning\t{}", one_line(w));
        }
        for k in self.settings.unused() {
            let _ = writeln!(out, "ignored_key\t{k}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(out, "input\t{p}\t{h}");
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(out, "file\t{p}\t{h}");
        }
        out
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\t'], " ")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.tsv", split.as_str()))
}

fn parse_assignment(raw: &str) -> Result<(String, String)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{raw}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Runs the command. Returns `Ok(true)` when it finished without errors,
/// `Ok(false)` when some part (e.g. a slot) failed; fatal problems are `Err`.
/// The manifest is written in every case where the output directory is
/// usable.
pub fn run(cli: Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => BTreeMap::new(),
    };
    let mut overrides = cli
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(t) = cli.threshold {
        overrides.push(("threshold".into(), t.to_string()));
    }
    if let Command::Train { epochs: Some(e), .. } = &cli.command {
        overrides.push(("epochs".into(), e.to_string()));
    }
    let mut settings = Settings::new(file, overrides);
    let seed = settings.get("seed", 0u64)?;
    let threshold = settings.get("threshold", crate::ModelScore::THRESHOLD)?;

    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut run = Run {
        out: cli.out.clone(),
        settings,
        seed,
        threshold,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        warnings: Vec::new(),
        errors: Vec::new(),
    };
    if let Some(path) = &cli.config {
        run.read(path)?;
    }
    let name = cli.command.name();
    let result = dispatch(&mut run, &cli.command);
    let config = run.settings.to_text();
    run.write("config.txt", &config)?;
    let manifest = run.manifest(name, result.as_ref().err());
    fs::write(run.out.join("manifest.tsv"), manifest).context("writing manifest")?;
    result.map(|()| run.errors.is_empty())
}

fn dispatch(run: &mut Run, command: &Command) -> Result<()> {
    match command {
        Command::GenData { kb, templates } => gen_data::gen_data(run, kb.as_deref(), templates.as_deref()),
        Command::Train {
            model,
            data,
            patterns,
            ..
        } => train::train(run, ModelKind::parse(model)?, data.as_deref(), patterns.as_deref()),
        Command::Eval { models, data } => evaluate::eval(run, models, data),
        Command::Combine { inputs } => evaluate::combine(run, inputs),
        Command::Tune {
            model,
            data,
            grid,
            patterns,
        } => train::tune(run, ModelKind::parse(model)?, data, grid, patterns.as_deref()),
        Command::GenreMatrix { data, model, patterns } => {
            let kinds = model
                .split(',')
                .map(|m| ModelKind::parse(m.trim()))
                .collect::<Result<Vec<_>>>()?;
            train::genre(run, &kinds, data, patterns.as_deref())
        }
        Command::Correlate { reports, end_to_end } => evaluate::correlate(run, reports, end_to_end),
    }
}
