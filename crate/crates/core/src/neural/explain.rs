//! Which n-grams do the most predictive filters pick?

use std::collections::BTreeMap;

use super::network::CnnModel;
use crate::corpus::RelationInstance;
use crate::evalkit::pearson;

/// Per filter, the largest value it contributed to the pooled vector.
pub fn pooled_filter_maxima(model: &CnnModel, instance: &RelationInstance) -> Vec<f64> {
    let trace = model.forward_trace(instance);
    let kk = model.config.pooled_per_region();
    let nf = model.config.n_filters;
    (0..nf)
        .map(|f| {
            (0..trace.regions.len())
                .flat_map(|r| {
                    let base = (r * nf + f) * kk;
                    trace.features[base..base + kk].iter().copied()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Filters ordered by the Pearson correlation between their pooled maximum
/// and the positive-class score, strongest first. Filters whose correlation
/// is undefined go last; ties keep filter order.
pub fn rank_filters(model: &CnnModel, instances: &[RelationInstance]) -> Vec<usize> {
    let maxima: Vec<Vec<f64>> = instances.iter().map(|i| pooled_filter_maxima(model, i)).collect();
    let scores: Vec<f64> = instances.iter().map(|i| model.forward(i).value()).collect();
    let mut keyed: Vec<(usize, Option<f64>)> = (0..model.config.n_filters)
        .map(|f| {
            let column: Vec<f64> = maxima.iter().map(|m| m[f]).collect();
            (f, pearson(&column, &scores).ok())
        })
        .collect();
    keyed.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    keyed.into_iter().map(|(f, _)| f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// The filters used, best first.
    pub filters: Vec<usize>,
    /// Sentence position → how often a window centered there was selected.
    pub counts: BTreeMap<usize, usize>,
}

/// Ranks filters on `instances`, then tallies, for `target`, the window
/// centers the `top_n` best filters selected during pooling. Windows centered
/// on padding are credited to the nearest token of their context; selections
/// from empty contexts are dropped.
pub fn explain_top_filters(
    model: &CnnModel,
    instances: &[RelationInstance],
    target: &RelationInstance,
    top_n: usize,
) -> Attribution {
    let mut filters = rank_filters(model, instances);
    filters.truncate(top_n);
    let trace = model.forward_trace(target);
    let w = model.config.width as isize;
    let mut counts = BTreeMap::new();
    for region in &trace.regions {
        let input = &trace.inputs[region.input];
        if input.ids.is_empty() {
            continue;
        }
        let last = input.ids.len() as isize - 1;
        for &f in &filters {
            for &p in &region.selected[f] {
                let center = (p as isize - (w - 1) + (w - 1) / 2).clamp(0, last);
                *counts.entry(input.offset + center as usize).or_insert(0) += 1;
            }
        }
    }
    Attribution { filters, counts }
}
