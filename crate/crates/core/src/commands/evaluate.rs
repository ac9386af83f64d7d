use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use super::models::load_models;
use super::Run;
use crate::combiner::{grid_search_per_slot, histogram_text, weight_histogram, ScoreTable, DEFAULT_STEP};
use crate::corpus::Split;
use crate::distsup::merge_location_slots;
use crate::evalkit::{evaluate, pearson, EvalReport};
use crate::Classifier;

const TEST_SPLITS: [Split; 2] = [Split::Dev, Split::Eval];
const MACRO: &str = "MACRO";

fn report_header() -> String {
    "# F1 in MACRO rows is the unweighted mean over slots\nsplit\tslot\ttp\tfp\tfn\tprecision\trecall\tf1\n".to_string()
}

fn report_rows(out: &mut String, split: Split, report: &EvalReport) {
    for (slot, m) in &report.per_slot {
        let _ = writeln!(
            out,
            "{split}\t{slot}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            m.tp,
            m.fp,
            m.fn_,
            m.precision(),
            m.recall(),
            m.f1()
        );
    }
    let _ = writeln!(out, "{split}\t{MACRO}\t-\t-\t-\t-\t-\t{:.4}", report.macro_f1());
}

fn table_report(table: &ScoreTable, column: usize, threshold: f64) -> Result<EvalReport> {
    Ok(evaluate(
        table.rows.iter().map(|r| (r.slot.as_str(), r.gold, Some(r.scores[column]))),
        threshold,
    )?)
}

fn scores_file(split: Split) -> String {
    format!("scores.{split}.tsv")
}

pub fn eval(run: &mut Run, models_dir: &Path, data: &Path) -> Result<()> {
    let (kind, models) = load_models(run, models_dir)?;
    let merge = run.settings.get("merge_locations", false)?;
    let mut report = report_header();
    let mut found = false;
    for split in TEST_SPLITS {
        let Some(mut instances) = run.read_split(data, split)? else {
            continue;
        };
        found = true;
        if merge {
            instances = merge_location_slots(&instances);
        }
        let scores: Vec<Option<f64>> = instances
            .par_iter()
            .map(|i| models.get(&i.slot).map(|m| m.score(i).value()))
            .collect();
        let mut table = ScoreTable::new(vec![kind.name().to_string()]);
        let mut missing = BTreeSet::new();
        for (inst, score) in instances.iter().zip(scores) {
            match score {
                Some(s) => table.push(&inst.slot, inst.label, vec![s]),
                None => {
                    missing.insert(inst.slot.clone());
                }
            }
        }
        for slot in missing {
            run.warn(format!("{split}: no model for slot {slot}; its instances are skipped"));
        }
        report_rows(&mut report, split, &table_report(&table, 0, run.threshold)?);
        run.write(&scores_file(split), &table.to_text())?;
    }
    if !found {
        bail!("{} has neither dev.tsv nor eval.tsv", data.display());
    }
    run.write("report.tsv", &report)
}

/// Score table of `split` from an `eval` output directory or a table file.
fn read_table(run: &mut Run, input: &Path, split: Split) -> Result<Option<ScoreTable>> {
    let path: PathBuf = if input.is_dir() { input.join(scores_file(split)) } else { input.to_path_buf() };
    if !path.exists() {
        return Ok(None);
    }
    let text = run.read(&path)?;
    ScoreTable::parse(&text)
        .with_context(|| format!("in {}", path.display()))
        .map(Some)
}

pub fn combine(run: &mut Run, inputs: &[PathBuf]) -> Result<()> {
    if inputs.len() < 2 {
        bail!("combine needs at least two score tables");
    }
    let step = run.settings.get("step", DEFAULT_STEP)?;
    let mut merged = BTreeMap::new();
    for split in TEST_SPLITS {
        let mut tables = Vec::new();
        for input in inputs {
            if let Some(t) = read_table(run, input, split)? {
                tables.push(t);
            }
        }
        match tables.len() {
            0 => continue,
            n if n == inputs.len() => {
                merged.insert(split, ScoreTable::merge(&tables).with_context(|| format!("{split} tables"))?);
            }
            _ => bail!("only some inputs have {split} scores"),
        }
    }
    let dev = merged
        .get(&Split::Dev)
        .ok_or_else(|| anyhow!("combination weights are tuned on dev, but no dev scores were given"))?;
    let models = dev.models.clone();
    let tuned = grid_search_per_slot(dev, step)?;

    let mut weights_text = format!("slot\t{}\tdev_f1\n", models.join("\t"));
    for (slot, (w, f1)) in &tuned {
        let alphas: Vec<String> = w.alphas().iter().map(|a| a.to_string()).collect();
        let _ = writeln!(weights_text, "{slot}\t{}\t{f1:.4}", alphas.join("\t"));
    }
    let chosen: BTreeMap<String, _> = tuned.iter().map(|(s, (w, _))| (s.clone(), w.clone())).collect();
    let hist = weight_histogram(&chosen, models.len(), step)?;

    let mut report = report_header();
    let mut members = format!("split\tslot\t{}\tcmb\n", models.join("\t"));
    for (&split, table) in &merged {
        let mut combined = ScoreTable::new(vec!["cmb".to_string()]);
        let mut untuned = BTreeSet::new();
        for r in &table.rows {
            match chosen.get(&r.slot) {
                Some(w) => combined.push(&r.slot, r.gold, vec![w.apply(&r.scores)?.value()]),
                None => {
                    untuned.insert(r.slot.clone());
                }
            }
        }
        for slot in untuned {
            run.warn(format!("{split}: slot {slot} has no dev rows, so no weights; skipped"));
        }
        let cmb = table_report(&combined, 0, run.threshold)?;
        let member_reports = (0..models.len())
            .map(|m| table_report(table, m, run.threshold))
            .collect::<Result<Vec<_>>>()?;
        for slot in cmb.per_slot.keys() {
            let f: Vec<String> = member_reports.iter().map(|r| format!("{:.4}", r.slot_f1(slot))).collect();
            let _ = writeln!(members, "{split}\t{slot}\t{}\t{:.4}", f.join("\t"), cmb.slot_f1(slot));
        }
        let f: Vec<String> = member_reports.iter().map(|r| format!("{:.4}", r.macro_f1())).collect();
        let _ = writeln!(members, "{split}\t{MACRO}\t{}\t{:.4}", f.join("\t"), cmb.macro_f1());
        report_rows(&mut report, split, &cmb);
        run.write(&scores_file(split), &combined.to_text())?;
    }
    run.write("weights.tsv", &weights_text)?;
    run.write("histogram.tsv", &histogram_text(&models, &hist, step)?)?;
    run.write("members.tsv", &members)?;
    run.write("report.tsv", &report)
}

/// Macro F1 of the eval split (dev when there is no eval section).
pub fn report_macro_f1(text: &str) -> Option<f64> {
    let lookup = |split: &str| {
        text.lines().find_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f.len() == 8 && f[0] == split && f[1] == MACRO).then(|| f[7].parse().ok()).flatten()
        })
    };
    lookup("eval").or_else(|| lookup("dev"))
}

pub fn correlate(run: &mut Run, reports: &[PathBuf], end_to_end: &Path) -> Result<()> {
    let e2e_text = run.read(end_to_end)?;
    let mut e2e = Vec::new();
    for (i, line) in e2e_text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, f1) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{} line {}: expected `name<TAB>f1`", end_to_end.display(), i + 1))?;
        let f1: f64 = f1
            .trim()
            .parse()
            .map_err(|_| anyhow!("{} line {}: bad F1 `{f1}`", end_to_end.display(), i + 1))?;
        e2e.push((name.to_string(), f1));
    }
    if e2e.len() != reports.len() {
        bail!("{} reports but {} end-to-end scores", reports.len(), e2e.len());
    }
    let mut component = Vec::with_capacity(reports.len());
    for path in reports {
        let text = run.read(path)?;
        component.push(report_macro_f1(&text).ok_or_else(|| anyhow!("{}: no MACRO row", path.display()))?);
    }
    let ys: Vec<f64> = e2e.iter().map(|(_, f)| *f).collect();
    let r = pearson(&component, &ys)?;

    let mut table = String::from("config_name\tcomponent_avg_f1\tend_to_end_f1\n");
    for ((name, e), c) in e2e.iter().zip(&component) {
        let _ = writeln!(table, "{name}\t{c}\t{e}");
    }
    run.write("correlation_input.tsv", &table)?;
    run.write("correlation.txt", &format!("pearson_r\t{r}\nn\t{}\n", component.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_row_lookup() {
        let text = "# x\nsplit\tslot\ttp\tfp\tfn\tprecision\trecall\tf1\n\
                    dev\tMACRO\t-\t-\t-\t-\t-\t0.5000\n\
                    eval\ts\t1\t0\t0\t1.0000\t1.0000\t1.0000\n\
                    eval\tMACRO\t-\t-\t-\t-\t-\t0.7500\n";
        assert_eq!(report_macro_f1(text), Some(0.75));
        let dev_only: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert_eq!(report_macro_f1(&dev_only), Some(0.5));
        assert_eq!(report_macro_f1("nothing"), None);
    }
}
