use serde::{Deserialize, Serialize};

use super::{log_prob, CharLm, LmError};
use crate::corpus::TaggedCorpus;

/// `exp(-mean(log_probs))`, natural logarithms throughout.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> f64 {
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    (-mean).exp()
}

/// Perplexity of `text` under `model`, scored from a zero state. Every
/// character after the first is predicted once; backward models score the
/// reversed text.
pub fn sentence_perplexity(model: &CharLm, text: &str) -> Result<f64, LmError> {
    let idx = model.encode_directional(text);
    if idx.len() < 2 {
        return Err(LmError::TooShort {
            needed: 2,
            found: idx.len(),
        });
    }
    let out = model.lm_forward(&idx[..idx.len() - 1], &model.initial_state())?;
    let log_probs: Vec<f64> = out
        .logits
        .iter()
        .zip(&idx[1..])
        .map(|(l, &t)| log_prob(l, t))
        .collect();
    Ok(perplexity_from_log_probs(&log_probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    /// Arithmetic mean of the per-sentence perplexities.
    pub mean: f64,
    pub scored: usize,
    pub skipped: usize,
    pub sentences: Vec<f64>,
}

/// Averages [`sentence_perplexity`] over sentences; those shorter than two
/// characters are skipped and counted.
pub fn corpus_perplexity<I, S>(model: &CharLm, sentences: I) -> Result<PerplexityReport, LmError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut values = Vec::new();
    let mut skipped = 0;
    for s in sentences {
        match sentence_perplexity(model, s.as_ref()) {
            Ok(p) => values.push(p),
            Err(LmError::TooShort { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(LmError::NothingToScore);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} sentences too short to score");
    }
    Ok(PerplexityReport {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        scored: values.len(),
        skipped,
        sentences: values,
    })
}

/// Scores each sentence rendered as space-joined tokens.
pub fn tagged_corpus_perplexity(
    model: &CharLm,
    corpus: &TaggedCorpus,
) -> Result<PerplexityReport, LmError> {
    corpus_perplexity(model, corpus.sentences.iter().map(|s| s.render()))
}
