use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{convert_scheme, TagScheme, TaggedCorpus};
use crate::embed::{StackedEmbedder, StaticFeatures};
use crate::eval::evaluate;
use crate::nn::{self, Parameters};
use crate::schedule::{Objective, PlateauScheduler};

use super::{predict, NerModel, TagSet, TaggerConfig, TaggerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean sentence NLL over the epoch.
    pub train_loss: f64,
    pub dev_f1: f64,
    pub improved: bool,
    pub bad_epochs: usize,
    /// Learning rate for the following epoch, when this epoch triggered
    /// annealing.
    pub annealed_to: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    /// The learning rate fell below `min_learning_rate`.
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub stop_reason: StopReason,
}

impl TrainingLog {
    pub fn dev_f1_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.dev_f1).collect()
    }
}

/// Trains a tagger with dev-set micro F1 as the selection and annealing
/// signal.
pub fn train_ner(
    embedder: StackedEmbedder,
    train: &TaggedCorpus,
    dev: &TaggedCorpus,
    config: &TaggerConfig,
) -> Result<(NerModel, TrainingLog), TaggerError> {
    let dev_iobes = convert_scheme(dev, TagScheme::Iobes)?;
    train_ner_with_scorer(embedder, train, dev, config, |_, model| {
        let predicted = predict(model, &dev_iobes)?;
        Ok(evaluate(&predicted, &predicted)?.f1)
    })
}

/// As [`train_ner`], with the per-epoch dev score supplied by `score(epoch,
/// model)`.
///
/// Each epoch shuffles the training sentences, takes SGD steps on the mean
/// CRF NLL of each mini-batch (gradient clipped to `clip_norm`), then scores
/// the model. After `patience` consecutive epochs without a new best score
/// the learning rate is multiplied by `anneal_factor`. Training stops after
/// `max_epochs`, or before an epoch whose learning rate is below
/// `min_learning_rate`. The returned model carries the parameters of the
/// best-scoring epoch.
pub fn train_ner_with_scorer<F>(
    embedder: StackedEmbedder,
    train: &TaggedCorpus,
    dev: &TaggedCorpus,
    config: &TaggerConfig,
    mut score: F,
) -> Result<(NerModel, TrainingLog), TaggerError>
where
    F: FnMut(usize, &NerModel) -> Result<f64, TaggerError>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(TaggerError::EmptyTrain);
    }
    if dev.is_empty() {
        return Err(TaggerError::EmptyDev);
    }
    let train = convert_scheme(train, TagScheme::Iobes)?;
    let dev = convert_scheme(dev, TagScheme::Iobes)?;
    let tagset = TagSet::from_corpora(&[&train, &dev]);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = NerModel::new(tagset, embedder, config.lstm_hidden, &mut rng);

    let mut examples: Vec<(StaticFeatures, Vec<usize>)> = Vec::with_capacity(train.len());
    for (i, s) in train.sentences.iter().enumerate() {
        let gold = model.gold_indices(s)?.ok_or(TaggerError::MissingGold(i))?;
        examples.push((model.embedder.static_features(s)?, gold));
    }

    let mut scheduler = PlateauScheduler::new(
        config.learning_rate,
        config.anneal_factor,
        config.patience,
        Objective::Maximize,
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best = model.clone();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_f1: 0.0,
        stop_reason: StopReason::MaxEpochs,
    };

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.learning_rate();
        if lr < config.min_learning_rate {
            log.stop_reason = StopReason::Converged;
            log::info!("learning rate {lr} below {}; converged", config.min_learning_rate);
            break;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.mini_batch) {
            let mut grads = nn::zeros_like(&model);
            for &i in batch {
                let (statics, gold) = &examples[i];
                total += model.loss_and_grad(&train.sentences[i], statics, gold, &mut grads)?;
            }
            nn::scale(&mut grads, 1.0 / batch.len() as f64);
            nn::clip_global_norm(&mut grads, config.clip_norm);
            nn::sgd_step(&mut model, &grads, lr);
        }
        let train_loss = total / examples.len() as f64;
        let dev_f1 = score(epoch, &model)?;
        let step = scheduler.step(dev_f1);
        if step.improved {
            best = model.clone();
            log.best_epoch = epoch;
            log.best_dev_f1 = dev_f1;
        }
        log::info!(
            "epoch {epoch}: lr {lr} loss {train_loss:.4} dev F1 {:.2}{}",
            100.0 * dev_f1,
            if step.improved { " (best)" } else { "" }
        );
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            dev_f1,
            improved: step.improved,
            bad_epochs: step.bad_epochs,
            annealed_to: step.annealed_to,
        });
        if !model.all_finite() {
            log::warn!("parameters became non-finite at epoch {epoch}; keeping the best epoch");
            break;
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharVocabulary, Sentence, Split, Token};
    use crate::embed::{CharFeatureEncoder, EmbeddingComponent, WordEmbeddingTable};

    fn toy() -> TaggedCorpus {
        let rows: [&[(&str, &str)]; 4] = [
            &[("Herr", "O"), ("Maier", "B-PER"), ("in", "O"), ("Wien", "B-LOC")],
            &[("die", "O"), ("Neue", "B-ORG"), ("Freie", "I-ORG"), ("Presse", "I-ORG")],
            &[("aus", "O"), ("Graz", "B-LOC")],
            &[("Frau", "O"), ("Huber", "B-PER"), ("schreibt", "O")],
        ];
        let sentences = rows
            .iter()
            .map(|r| Sentence::new(r.iter().map(|(w, t)| Token::new(*w).unwrap().with_gold(*t)).collect()).unwrap())
            .collect();
        TaggedCorpus::new(sentences, TagScheme::Iob2, Split::Train).unwrap()
    }

    fn embedder() -> StackedEmbedder {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let text: String = toy().sentences.iter().map(|s| s.render()).collect();
        let mut words = WordEmbeddingTable::new(2);
        words.insert("in", vec![1.0, 0.0]);
        StackedEmbedder::new(vec![
            EmbeddingComponent::word(words),
            EmbeddingComponent::CharFeatures(CharFeatureEncoder::new(CharVocabulary::from_text(&text), 6, 6, &mut rng)),
        ])
        .unwrap()
    }

    fn config() -> TaggerConfig {
        TaggerConfig {
            lstm_hidden: 8,
            mini_batch: 2,
            max_epochs: 60,
            seed: 4,
            ..TaggerConfig::default()
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let c = toy();
        let empty = TaggedCorpus::empty(TagScheme::Iob2, Split::Train);
        assert!(matches!(train_ner(embedder(), &empty, &c, &config()), Err(TaggerError::EmptyTrain)));
        assert!(matches!(train_ner(embedder(), &c, &empty, &config()), Err(TaggerError::EmptyDev)));
    }

    #[test]
    fn flat_scores_anneal_after_patience() {
        let cfg = TaggerConfig {
            max_epochs: 6,
            ..config()
        };
        let (_, log) = train_ner_with_scorer(embedder(), &toy(), &toy(), &cfg, |_, _| Ok(0.5)).unwrap();
        let lrs: Vec<f64> = log.epochs.iter().map(|e| e.learning_rate).collect();
        assert_eq!(lrs, vec![0.1, 0.1, 0.1, 0.1, 0.05, 0.05]);
        assert_eq!(log.epochs[3].annealed_to, Some(0.05));
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn tiny_learning_rate_converges_immediately() {
        let cfg = TaggerConfig {
            learning_rate: 1e-5,
            ..config()
        };
        let (_, log) = train_ner(embedder(), &toy(), &toy(), &cfg).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(log.stop_reason, StopReason::Converged);
        assert!(serde_json::to_string(&log).unwrap().contains("\"converged\""));
    }

    #[test]
    fn loss_falls_and_training_is_deterministic() {
        let (model, log) = train_ner(embedder(), &toy(), &toy(), &config()).unwrap();
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let (_, again) = train_ner(embedder(), &toy(), &toy(), &config()).unwrap();
        assert_eq!(log.dev_f1_trace(), again.dev_f1_trace());
        assert_eq!(model.tagset().len(), 13);
    }
}
