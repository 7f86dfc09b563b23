//! Bi-LSTM-CRF sequence labeling over stacked embeddings.

mod crf;
mod model;
mod train;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::FormatError;
use crate::corpus::{format_tag, CorpusError, Prefix, TaggedCorpus};
use crate::embed::EmbedError;
use crate::eval::EvalError;

pub use crf::{crf_log_partition, crf_nll, viterbi_decode, CrfLayer, FORBIDDEN};
pub use model::{predict, EmissionTrace, NerModel, MODEL_KIND};
pub use train::{train_ner, train_ner_with_scorer, EpochRecord, StopReason, TrainingLog};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("path has {found} tags, sentence has {expected} tokens")]
    PathLength { expected: usize, found: usize },
    #[error("tag index {0} is START or STOP")]
    VirtualTag(usize),
    #[error("tag {0:?} is not in the tag set")]
    UnknownTag(String),
    #[error("sentence {0} has no gold tags")]
    MissingGold(usize),
    #[error("training corpus is empty")]
    EmptyTrain,
    #[error("development corpus is empty")]
    EmptyDev,
    #[error("invalid tagger configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// IOBES tags over a set of entity labels: `O` first, then `B-`, `I-`,
/// `E-`, `S-` for each label in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSet {
    tags: Vec<String>,
}

impl TagSet {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut labels: Vec<String> = labels.into_iter().map(|l| l.as_ref().to_string()).collect();
        labels.sort();
        labels.dedup();
        let mut tags = vec!["O".to_string()];
        for l in &labels {
            for p in [Prefix::B, Prefix::I, Prefix::E, Prefix::S] {
                tags.push(format_tag(p, l));
            }
        }
        TagSet { tags }
    }

    /// Labels found in the gold tags of any of `corpora`.
    pub fn from_corpora(corpora: &[&TaggedCorpus]) -> Self {
        Self::from_labels(corpora.iter().flat_map(|c| c.labels()))
    }

    pub(crate) fn from_tags(tags: Vec<String>) -> Self {
        TagSet { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

/// Training hyper-parameters. `min_learning_rate` ends training once
/// annealing has driven the rate below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub lstm_hidden: usize,
    pub learning_rate: f64,
    pub mini_batch: usize,
    pub max_epochs: usize,
    pub anneal_factor: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            lstm_hidden: 512,
            learning_rate: 0.1,
            mini_batch: 8,
            max_epochs: 500,
            anneal_factor: 0.5,
            patience: 3,
            min_learning_rate: 1e-4,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        let fail = |m: &str| Err(TaggerError::Config(m.to_string()));
        if self.lstm_hidden == 0 {
            return fail("lstm_hidden must be positive");
        }
        if self.mini_batch == 0 {
            return fail("mini_batch must be positive");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return fail("anneal_factor must lie strictly between 0 and 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(self.min_learning_rate >= 0.0) {
            return fail("min_learning_rate must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        Ok(())
    }
}
