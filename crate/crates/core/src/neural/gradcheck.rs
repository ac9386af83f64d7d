//! Finite-difference verification of the analytic gradients.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::network::{CnnModel, Gradients};
use crate::corpus::{RelationInstance, PAD_INDEX};
use crate::seed::rng_for;

/// Address of one scalar parameter.
#[derive(Debug, Clone, Copy)]
enum Param {
    /// Index into one of the six dense tensors.
    Dense(usize, usize),
    Embedding(usize, usize),
}

fn parameters(model: &CnnModel, instance: &RelationInstance) -> Vec<Param> {
    let mut out: Vec<Param> = model
        .params
        .dense()
        .iter()
        .enumerate()
        .flat_map(|(t, v)| (0..v.len()).map(move |i| Param::Dense(t, i)))
        .collect();
    if model.config.finetune_embeddings {
        let rows: BTreeSet<usize> = model
            .token_ids(&instance.tokens)
            .into_iter()
            .filter(|&r| r != PAD_INDEX)
            .collect();
        for r in rows {
            out.extend((0..model.config.dim).map(|e| Param::Embedding(r, e)));
        }
    }
    out
}

fn analytic(grads: &Gradients, p: Param, dim: usize) -> f64 {
    match p {
        Param::Dense(t, i) => grads.dense()[t][i],
        Param::Embedding(r, e) => grads.embeddings.get(&r).map_or(0.0, |g| {
            debug_assert_eq!(g.len(), dim);
            g[e]
        }),
    }
}

fn slot(model: &mut CnnModel, p: Param) -> &mut f64 {
    match p {
        Param::Dense(t, i) => &mut model.params.dense_mut()[t][i],
        Param::Embedding(r, e) => &mut model.params.embeddings.row_mut(r)[e],
    }
}

fn relative_error(model: &CnnModel, instance: &RelationInstance, eps: f64, params: &[Param]) -> f64 {
    let mut grads = Gradients::zeros_like(&model.params);
    model.accumulate_gradients(instance, &mut grads);
    compare(model, instance, eps, params, &grads)
}

fn compare(
    model: &CnnModel,
    instance: &RelationInstance,
    eps: f64,
    params: &[Param],
    grads: &Gradients,
) -> f64 {
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for &p in params {
        let orig = *slot(&mut probe, p);
        *slot(&mut probe, p) = orig + eps;
        let plus = probe.loss(instance);
        *slot(&mut probe, p) = orig - eps;
        let minus = probe.loss(instance);
        *slot(&mut probe, p) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let ga = analytic(grads, p, model.config.dim);
        let err = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Largest relative error between backprop and central differences over
/// every parameter, including the embedding rows the instance reads.
pub fn grad_check(model: &CnnModel, instance: &RelationInstance, eps: f64) -> f64 {
    let params = parameters(model, instance);
    relative_error(model, instance, eps, &params)
}

/// As [`grad_check`] on a seeded random subset of `samples` parameters (all
/// of them if there are fewer).
pub fn grad_check_sampled(
    model: &CnnModel,
    instance: &RelationInstance,
    eps: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut params = parameters(model, instance);
    params.shuffle(&mut rng_for(seed, "grad-check"));
    params.truncate(samples);
    relative_error(model, instance, eps, &params)
}
