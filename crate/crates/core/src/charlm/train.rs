use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CharLm, CharLmConfig, Direction, LmError};
use crate::corpus::CharVocabulary;
use crate::nn::{self, Parameters};
use crate::schedule::{Objective, PlateauScheduler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_perplexity: f64,
    pub test_perplexity: f64,
    pub annealed_to: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainingLog {
    pub direction: Direction,
    pub train_chars: usize,
    pub dev_chars: usize,
    pub test_chars: usize,
    pub windows_per_epoch: usize,
    pub initial_test_perplexity: f64,
    pub epochs: Vec<LmEpochRecord>,
}

impl LmTrainingLog {
    pub fn final_test_perplexity(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_test_perplexity, |e| e.test_perplexity)
    }
}

/// Trains a character LM on `text`.
///
/// Backward models reverse the character stream first. The stream is then
/// split into train, dev and test, the latter two taking
/// `1 / holdout_denominator` each (at least two characters). Training runs
/// SGD over consecutive `sequence_length` windows, carrying the recurrent
/// state across windows without backpropagating through the boundary, with
/// global-norm gradient clipping. After every epoch the dev loss drives a
/// plateau scheduler.
///
/// When `vocab` is `None` the vocabulary is extracted from `text`.
pub fn train_lm(
    text: &str,
    vocab: Option<&CharVocabulary>,
    config: &CharLmConfig,
    seed: u64,
) -> Result<(CharLm, LmTrainingLog), LmError> {
    config.validate()?;
    let mut chars: Vec<char> = text.chars().collect();
    if config.direction == Direction::Backward {
        chars.reverse();
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => CharVocabulary::from_chars(chars.iter().copied()),
    };

    let n = chars.len();
    let holdout = (n / config.holdout_denominator).max(2);
    let train_len = n.saturating_sub(2 * holdout);
    if train_len < config.sequence_length + 1 {
        return Err(LmError::TooShort {
            needed: config.sequence_length + 1 + 2 * holdout,
            found: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = CharLm::new(
        vocab,
        config.direction,
        config.char_embed_dim,
        config.hidden_size,
        &mut rng,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);

    let idx: Vec<usize> = chars.iter().map(|&c| model.index_of(c)).collect();
    let train = &idx[..train_len];
    let dev = &idx[train_len..train_len + holdout];
    let test = &idx[train_len + holdout..];

    let windows: Vec<(usize, usize)> = (0..train_len - 1)
        .step_by(config.sequence_length)
        .map(|k| (k, (k + config.sequence_length).min(train_len - 1)))
        .collect();

    let mut log = LmTrainingLog {
        direction: config.direction,
        train_chars: train_len,
        dev_chars: dev.len(),
        test_chars: test.len(),
        windows_per_epoch: windows.len(),
        initial_test_perplexity: model.sequence_loss(test)?.exp(),
        epochs: Vec::new(),
    };

    let mut scheduler = PlateauScheduler::new(
        config.learning_rate,
        config.anneal_factor,
        config.patience,
        Objective::Minimize,
    );
    let mut grads = nn::zeros_like(&model);
    for epoch in 1..=config.epochs {
        let lr = scheduler.learning_rate();
        let mut state = model.initial_state();
        let mut total = 0.0;
        for &(start, end) in &windows {
            for t in grads.tensors_mut() {
                t.fill(0.0);
            }
            let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut dropout_rng));
            let (loss, next) = model.accumulate_gradient(
                &train[start..end],
                &train[start + 1..end + 1],
                &state,
                dropout,
                &mut grads,
            )?;
            total += loss;
            nn::clip_global_norm(&mut grads, config.clip_norm);
            if lr > 0.0 {
                nn::sgd_step(&mut model, &grads, lr);
            }
            state = next;
        }
        let dev_loss = model.sequence_loss(dev)?;
        let step = scheduler.step(dev_loss);
        let record = LmEpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: total / windows.len() as f64,
            dev_loss,
            dev_perplexity: dev_loss.exp(),
            test_perplexity: model.sequence_loss(test)?.exp(),
            annealed_to: step.annealed_to,
        };
        log::info!(
            "lm {} epoch {epoch}: lr {lr} train loss {:.4} dev ppl {:.4}",
            config.direction,
            record.train_loss,
            record.dev_perplexity
        );
        log.epochs.push(record);
    }
    Ok((model, log))
}
