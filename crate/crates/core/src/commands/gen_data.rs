use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use super::Run;
use crate::corpus::{write_instances, Genre, RelationInstance, Split};
use crate::distsup::{
    demo_kb, demo_templates, generate_corpus, merge_location_slots, parse_kb, parse_templates, trigger_patterns,
    write_kb, write_templates, GeneratorConfig, GenreMix, DEMO_MAX_PER_SLOT,
};

pub fn gen_data(run: &mut Run, kb: Option<&Path>, templates: Option<&Path>) -> Result<()> {
    let kb = match kb {
        Some(path) => parse_kb(&run.read(path)?).with_context(|| format!("in {}", path.display()))?,
        None => {
            let per_slot = run.settings.get("kb_per_slot", 40usize)?;
            if per_slot > DEMO_MAX_PER_SLOT {
                bail!("kb_per_slot {per_slot} exceeds the demo KB's {DEMO_MAX_PER_SLOT}");
            }
            demo_kb(per_slot, run.seed)
        }
    };
    let templates = match templates {
        Some(path) => parse_templates(&run.read(path)?).with_context(|| format!("in {}", path.display()))?,
        None => demo_templates(),
    };

    let d = GeneratorConfig::default();
    let s = &mut run.settings;
    let config = GeneratorConfig {
        neg_ratio: s.get("neg_ratio", d.neg_ratio)?,
        noise_rate: s.get("noise_rate", d.noise_rate)?,
        dev_era: GenreMix {
            news: s.get("dev_news_share", d.dev_era.news)?,
        },
        eval_era: GenreMix {
            news: s.get("eval_news_share", d.eval_era.news)?,
        },
        positives: [
            s.get("positives_train", d.positives[0])?,
            s.get("positives_dev", d.positives[1])?,
            s.get("positives_eval", d.positives[2])?,
        ],
        max_context: s.get("max_context", d.max_context)?,
        seed: run.seed,
    };
    let merge = s.get("merge_locations", false)?;
    let generated = generate_corpus(&kb, &templates, &config)?;
    let instances = if merge {
        merge_location_slots(&generated.instances)
    } else {
        generated.instances.clone()
    };

    let mut truth = String::from("split\tline\tlabel\ttruth\n");
    for split in Split::ALL {
        let (part, labels): (Vec<RelationInstance>, Vec<_>) = instances
            .iter()
            .zip(&generated.truth)
            .filter(|(i, _)| i.split == split)
            .map(|(i, t)| (i.clone(), *t))
            .unzip();
        for (n, (inst, t)) in part.iter().zip(&labels).enumerate() {
            let _ = writeln!(truth, "{split}\t{}\t{}\t{}", n + 1, inst.label.as_digit(), t.as_digit());
        }
        run.write(&format!("{split}.tsv"), &write_instances(&part))?;
    }
    run.write("truth.tsv", &truth)?;
    run.write("stats.tsv", &stats(&instances))?;
    run.write("kb.tsv", &write_kb(&kb))?;
    run.write("templates.tsv", &write_templates(&templates))?;
    run.write("patterns.txt", &trigger_patterns(&templates).to_text())?;
    Ok(())
}

#[derive(Default)]
struct Counts {
    pos: usize,
    neg: usize,
    genres: BTreeMap<Genre, usize>,
}

fn stats(instances: &[RelationInstance]) -> String {
    let mut table: BTreeMap<(Split, &str), Counts> = BTreeMap::new();
    for i in instances {
        let c = table.entry((i.split, i.slot.as_str())).or_default();
        if i.label.is_positive() {
            c.pos += 1;
        } else {
            c.neg += 1;
        }
        *c.genres.entry(i.genre).or_default() += 1;
    }
    let mut out = String::from("split\tslot\tpos\tneg\tneg_per_pos\tnews\tweb\tforum\n");
    for ((split, slot), c) in &table {
        let ratio = if c.pos == 0 { "-".to_string() } else { format!("{:.2}", c.neg as f64 / c.pos as f64) };
        let g = |genre| c.genres.get(&genre).copied().unwrap_or(0);
        let _ = writeln!(
            out,
            "{split}\t{slot}\t{}\t{}\t{ratio}\t{}\t{}\t{}",
            c.pos,
            c.neg,
            g(Genre::News),
            g(Genre::Web),
            g(Genre::Forum)
        );
    }
    out
}
