use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use super::models::{save_models, train_slot, KindTrainer, ModelKind, ModelSettings, SlotModel};
use super::settings::{parse_config, parse_list, Settings};
use super::Run;
use crate::corpus::{RelationInstance, Split};
use crate::distsup::merge_location_slots;
use crate::evalkit::{genre_matrix, ModelTrainer, SlotMetrics};
use crate::seed::sub_seed;
use crate::Classifier;

/// Instances grouped by slot, in slot order.
pub fn by_slot(instances: &[RelationInstance]) -> BTreeMap<String, Vec<RelationInstance>> {
    let mut out: BTreeMap<String, Vec<RelationInstance>> = BTreeMap::new();
    for i in instances {
        out.entry(i.slot.clone()).or_default().push(i.clone());
    }
    out
}

/// The seed for everything trained for `slot`; independent of other slots.
pub fn slot_seed(seed: u64, slot: &str) -> u64 {
    sub_seed(seed, &format!("slot/{slot}"))
}

fn load_train_dev(run: &mut Run, data: &Path) -> Result<(Vec<RelationInstance>, Vec<RelationInstance>)> {
    let Some(mut train) = run.read_split(data, Split::Train)? else {
        bail!("{} has no train.tsv", data.display());
    };
    let mut dev = run.read_split(data, Split::Dev)?.unwrap_or_default();
    if run.settings.get("merge_locations", false)? {
        train = merge_location_slots(&train);
        dev = merge_location_slots(&dev);
    }
    Ok((train, dev))
}

pub fn train(run: &mut Run, kind: ModelKind, data: Option<&Path>, patterns: Option<&Path>) -> Result<()> {
    let settings = ModelSettings::resolve(kind, run, patterns, true)?;
    let (train, dev) = match data {
        Some(dir) => load_train_dev(run, dir)?,
        None if kind == ModelKind::Pat => (Vec::new(), Vec::new()),
        None => bail!("`train {}` needs --data <dir>", kind.name()),
    };

    if let ModelSettings::Pat(set) = &settings {
        // the pattern file is the model; data only tells which slots lack patterns
        let mut models = BTreeMap::new();
        let mut log = String::new();
        for slot in set.slots() {
            let _ = writeln!(log, "{slot}\t{} patterns", set.patterns(slot).len());
            models.insert(slot.to_string(), SlotModel::Pat(set.clone()));
        }
        for slot in by_slot(&train).keys() {
            if set.patterns(slot).is_empty() {
                run.warn(format!("slot {slot} has no patterns"));
            }
        }
        run.write("pattern_index.tsv", &log)?;
        return save_models(run, kind, &models);
    }

    let train = by_slot(&train);
    let dev = by_slot(&dev);
    let seed = run.seed;
    let results: Vec<(String, Result<super::models::TrainedSlot>)> = train
        .par_iter()
        .map(|(slot, data)| {
            let dev = dev.get(slot).map(Vec::as_slice).unwrap_or(&[]);
            (slot.clone(), train_slot(&settings, slot, data, dev, slot_seed(seed, slot)))
        })
        .collect();

    let mut models = BTreeMap::new();
    let mut log = String::new();
    for (slot, result) in results {
        match result {
            Ok(trained) => {
                for line in &trained.log {
                    let _ = writeln!(log, "{line}");
                }
                models.insert(slot, trained.model);
            }
            Err(e) => run.error(format!("slot {slot}: {e:#}")),
        }
    }
    run.write("train.log", &log)?;
    save_models(run, kind, &models)
}

/// Dev F1 of a classifier at the run's threshold.
fn dev_f1(model: &dyn Classifier, dev: &[RelationInstance], threshold: f64) -> f64 {
    let mut m = SlotMetrics::default();
    for i in dev {
        m.record(i.label, model.score(i).decide(threshold));
    }
    m.f1()
}

/// Cartesian product of the grid, first key varying slowest.
fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    // keep file order, which `parse_config`'s map would lose
    let keys: Vec<String> = text
        .lines()
        .filter_map(|l| l.split('#').next()?.split_once('=').map(|(k, _)| k.trim().to_string()))
        .collect();
    let map = parse_config(text)?;
    let mut grid = Vec::new();
    for k in keys {
        if grid.iter().any(|(g, _): &(String, Vec<String>)| *g == k) {
            bail!("grid key `{k}` given twice");
        }
        let values: Vec<String> = parse_list(&map[&k])?;
        if values.is_empty() {
            bail!("grid key `{k}` has no values");
        }
        grid.push((k, values));
    }
    if grid.is_empty() {
        bail!("empty grid");
    }
    Ok(grid)
}

pub fn tune(run: &mut Run, kind: ModelKind, data: &Path, grid: &Path, patterns: Option<&Path>) -> Result<()> {
    let grid = parse_grid(&run.read(grid)?).with_context(|| format!("in {}", grid.display()))?;
    let (train, dev) = load_train_dev(run, data)?;
    if dev.is_empty() {
        bail!("tuning needs dev data in {}", data.display());
    }
    let points = grid_points(&grid);
    let base = run.settings.clone();

    // resolve every grid point up front so bad values fail before training
    let mut resolved = Vec::with_capacity(points.len());
    for point in &points {
        let fork = Settings::new(base.provided().clone(), point.iter().cloned());
        let saved = std::mem::replace(&mut run.settings, fork);
        let r = ModelSettings::resolve(kind, run, patterns, false);
        let fork = std::mem::replace(&mut run.settings, saved);
        resolved.push(r?);
        run.settings.adopt(&fork, grid.iter().map(|(k, _)| k.as_str()));
    }

    let train = by_slot(&train);
    let dev = by_slot(&dev);
    let (seed, threshold) = (run.seed, run.threshold);
    type SlotOutcome = (String, Vec<Result<f64, String>>);
    let outcomes: Vec<SlotOutcome> = train
        .par_iter()
        .map(|(slot, data)| {
            let dev = dev.get(slot).map(Vec::as_slice).unwrap_or(&[]);
            let scores = resolved
                .iter()
                .map(|settings| {
                    let trained = train_slot(settings, slot, data, dev, slot_seed(seed, slot)).map_err(|e| format!("{e:#}"))?;
                    Ok(dev_f1(&trained.model, dev, threshold))
                })
                .collect();
            (slot.clone(), scores)
        })
        .collect();

    let describe = |p: &[(String, String)]| p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    let mut log = String::from("point\tconfig\tslot\tdev_f1\n");
    let mut best = String::from("slot\tpoint\tdev_f1\tconfig\n");
    for (slot, scores) in outcomes {
        if !dev.contains_key(&slot) {
            run.warn(format!("slot {slot} has no dev data; every point scores 0"));
        }
        let mut winner: Option<(usize, f64)> = None;
        for (p, score) in scores.iter().enumerate() {
            match score {
                Ok(f1) => {
                    let _ = writeln!(log, "{}\t{}\t{slot}\t{f1:.6}", p + 1, describe(&points[p]));
                    if winner.is_none_or(|(_, b)| *f1 > b) {
                        winner = Some((p, *f1));
                    }
                }
                Err(e) => {
                    let _ = writeln!(log, "{}\t{}\t{slot}\tfailed", p + 1, describe(&points[p]));
                    run.error(format!("slot {slot}, point {}: {e}", p + 1));
                }
            }
        }
        if let Some((p, f1)) = winner {
            let _ = writeln!(best, "{slot}\t{}\t{f1:.6}\t{}", p + 1, describe(&points[p]));
        }
    }
    run.write("grid_log.tsv", &log)?;
    run.write("best.tsv", &best)
}

pub fn genre(run: &mut Run, kinds: &[ModelKind], data: &Path, patterns: Option<&Path>) -> Result<()> {
    let mut instances = Vec::new();
    for split in Split::ALL {
        match run.read_split(data, split)? {
            Some(part) => instances.extend(part),
            None => bail!("{} has no {split}.tsv", data.display()),
        }
    }
    let mut trainers = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        trainers.push(KindTrainer {
            kind,
            settings: ModelSettings::resolve(kind, run, patterns, false)?,
        });
    }
    let refs: Vec<&dyn ModelTrainer> = trainers.iter().map(|t| t as &dyn ModelTrainer).collect();
    let matrix = genre_matrix(&instances, &refs, run.seed)?;
    run.write("genre_matrix.tsv", &matrix.to_report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_keeps_file_order() {
        let g = parse_grid("width = 3, 5\n# comment\nn_filters = 10,20,30\n").unwrap();
        assert_eq!(g[0].0, "width");
        let points = grid_points(&g);
        assert_eq!(points.len(), 6);
        assert_eq!(points[0], vec![("width".into(), "3".into()), ("n_filters".into(), "10".into())]);
        assert_eq!(points[1][1].1, "20");
        assert_eq!(points[3][0].1, "5");
        assert!(parse_grid("# nothing\n").is_err());
        assert!(parse_grid("a = \n").is_err());
    }
}
