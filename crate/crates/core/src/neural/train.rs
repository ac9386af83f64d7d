use rand::seq::SliceRandom;

use super::network::{CnnModel, Gradients};
use super::{CnnConfig, NeuralError};
use crate::corpus::{EmbeddingTable, RelationInstance, Vocabulary};
use crate::seed::rng_for;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CnnTrainLog {
    /// Mean training cross-entropy of each epoch, measured during the pass.
    pub epoch_loss: Vec<f64>,
}

/// Trains one binary CNN for the single slot of `instances` by mini-batch
/// SGD on the mean cross-entropy. The visiting order is reshuffled every
/// epoch from `config.seed`, so a run is reproducible bit for bit.
pub fn train_cnn(
    instances: &[RelationInstance],
    config: &CnnConfig,
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
) -> Result<(CnnModel, CnnTrainLog), NeuralError> {
    let first = instances.first().ok_or(NeuralError::EmptyData)?;
    if let Some(other) = instances.iter().find(|i| i.slot != first.slot) {
        return Err(NeuralError::MixedSlots(first.slot.clone(), other.slot.clone()));
    }
    let mut model = CnnModel::init(&first.slot, config.clone(), vocab, embeddings)?;
    let mut log = CnnTrainLog::default();
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = rng_for(config.seed, "cnn-shuffle");
    let mut grads = Gradients::zeros_like(&model.params);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.reset();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += model.accumulate_gradients(&instances[i], &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch, batch });
            }
            total += batch_loss;
            model.apply_gradients(&grads, config.learning_rate / chunk.len() as f64);
        }
        let mean = total / instances.len() as f64;
        log::debug!("{} epoch {epoch}: loss {mean:.6}", model.slot);
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Genre, Label, Span, Split};
    use crate::neural::Variant;
    use rand::Rng;

    /// Positives carry "founded" between the arguments, negatives a filler
    /// word drawn from the same pool as the surrounding context.
    fn trigger_corpus(n: usize, seed: u64) -> Vec<RelationInstance> {
        let words = ["the", "a", "in", "city", "year", "said", "with", "from"];
        let mut rng = rng_for(seed, "corpus");
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let mut toks: Vec<String> = Vec::new();
                for _ in 0..rng.gen_range(0..3) {
                    toks.push(words[rng.gen_range(0..words.len())].into());
                }
                let name = toks.len();
                toks.push("Acme".into());
                toks.push(words[rng.gen_range(0..words.len())].into());
                toks.push(if positive { "founded".into() } else { words[rng.gen_range(0..words.len())].into() });
                let filler = toks.len();
                toks.push("Smith".into());
                for _ in 0..rng.gen_range(0..3) {
                    toks.push(words[rng.gen_range(0..words.len())].into());
                }
                RelationInstance::new(
                    "org:founded_by",
                    Label::from_bool(positive),
                    Genre::News,
                    Split::Train,
                    toks,
                    Span::new(name, name + 1),
                    Span::new(filler, filler + 1),
                )
                .unwrap()
            })
            .collect()
    }

    fn small_config(variant: Variant, epochs: usize) -> CnnConfig {
        CnnConfig {
            variant,
            n_filters: 8,
            hidden: 8,
            dim: 8,
            epochs,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 3,
            ..Default::default()
        }
    }

    fn setup(data: &[RelationInstance], cfg: &CnnConfig) -> (Vocabulary, EmbeddingTable) {
        let vocab = Vocabulary::from_instances(data);
        let emb = EmbeddingTable::random(&vocab, cfg.dim, 11);
        (vocab, emb)
    }

    #[test]
    fn learns_trigger_word() {
        let data = trigger_corpus(200, 1);
        for variant in [Variant::Contextwise, Variant::Piecewise, Variant::PiecewiseExt] {
            let cfg = small_config(variant, 30);
            let (vocab, emb) = setup(&data, &cfg);
            let (model, log) = train_cnn(&data, &cfg, vocab, emb).unwrap();
            let correct = data
                .iter()
                .filter(|i| model.forward(i).is_positive() == i.label.is_positive())
                .count();
            let acc = correct as f64 / data.len() as f64;
            assert!(acc >= 0.95, "{variant:?}: accuracy {acc}");
            assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);
        }
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let data = trigger_corpus(20, 2);
        let cfg = small_config(Variant::Contextwise, 0);
        let (vocab, emb) = setup(&data, &cfg);
        let init = CnnModel::init("org:founded_by", cfg.clone(), vocab.clone(), emb.clone()).unwrap();
        let (model, log) = train_cnn(&data, &cfg, vocab, emb).unwrap();
        assert_eq!(model, init);
        assert!(log.epoch_loss.is_empty());
    }

    #[test]
    fn same_seed_same_model() {
        let data = trigger_corpus(40, 3);
        let cfg = small_config(Variant::PiecewiseExt, 3);
        let (vocab, emb) = setup(&data, &cfg);
        let (a, _) = train_cnn(&data, &cfg, vocab.clone(), emb.clone()).unwrap();
        let (b, _) = train_cnn(&data, &cfg, vocab, emb).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn frozen_embeddings_stay_put() {
        let data = trigger_corpus(20, 4);
        let cfg = CnnConfig { finetune_embeddings: false, ..small_config(Variant::Contextwise, 2) };
        let (vocab, emb) = setup(&data, &cfg);
        let (model, _) = train_cnn(&data, &cfg, vocab, emb.clone()).unwrap();
        assert_eq!(model.params.embeddings, emb);

        let cfg = small_config(Variant::Contextwise, 2);
        let (vocab, emb) = setup(&data, &cfg);
        let (model, _) = train_cnn(&data, &cfg, vocab, emb.clone()).unwrap();
        assert_ne!(model.params.embeddings, emb);
        assert!(model.params.embeddings.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = small_config(Variant::Contextwise, 1);
        let vocab = Vocabulary::new();
        let emb = EmbeddingTable::random(&vocab, cfg.dim, 0);
        assert_eq!(train_cnn(&[], &cfg, vocab.clone(), emb.clone()).unwrap_err(), NeuralError::EmptyData);
        let mut data = trigger_corpus(4, 5);
        data[3].slot = "per:spouse".into();
        assert!(matches!(train_cnn(&data, &cfg, vocab, emb), Err(NeuralError::MixedSlots(..))));
    }

    #[test]
    fn diverging_run_reports_batch() {
        let data = trigger_corpus(32, 6);
        let cfg = CnnConfig { learning_rate: 1e300, activation: crate::neural::Activation::Identity, ..small_config(Variant::Piecewise, 5) };
        let (vocab, emb) = setup(&data, &cfg);
        match train_cnn(&data, &cfg, vocab, emb) {
            Err(NeuralError::NonFiniteLoss { epoch, batch }) => assert!(epoch < 5 && batch < 4),
            other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l)),
        }
    }
}
