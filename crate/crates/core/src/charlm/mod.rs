//! Directional character-level LSTM language models.
//!
//! A [`CharLm`] embeds each character, runs one LSTM layer and projects the
//! hidden state to logits over the vocabulary plus one reserved UNK index.
//! Backward models read text right to left; callers hand them text in reading
//! order and the model reverses it.

mod perplexity;
mod train;

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{ContainerReader, ContainerWriter, FormatError};
use crate::corpus::{CharVocabulary, CorpusError};
use crate::nn::{self, Linear, Lstm, LstmState, LstmTrace, Matrix, Parameters};

pub use perplexity::{
    corpus_perplexity, perplexity_from_log_probs, sentence_perplexity, tagged_corpus_perplexity,
    PerplexityReport,
};
pub use train::{train_lm, LmEpochRecord, LmTrainingLog};

pub const MODEL_KIND: &str = "charlm";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("character index {index} out of range for {size} symbols")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("text needs at least {needed} characters, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("no sentence was long enough to score")]
    NothingToScore,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expected a {expected} model, found a {found} model")]
    Direction { expected: Direction, found: Direction },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" | "fwd" => Ok(Direction::Forward),
            "backward" | "bwd" => Ok(Direction::Backward),
            _ => Err(format!("unknown direction {s:?}")),
        }
    }
}

/// Training and architecture settings. Defaults are desk-scale; see
/// [`CharLmConfig::full_scale`] for the large configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharLmConfig {
    pub direction: Direction,
    pub char_embed_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Characters per truncated-backpropagation window.
    pub sequence_length: usize,
    pub mini_batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied when dev loss stops improving.
    pub anneal_factor: f64,
    pub patience: usize,
    pub clip_norm: f64,
    /// Dev and test each take `1 / holdout_denominator` of the text.
    pub holdout_denominator: usize,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        CharLmConfig {
            direction: Direction::Forward,
            char_embed_dim: 64,
            hidden_size: 128,
            num_layers: 1,
            dropout: 0.1,
            sequence_length: 250,
            mini_batch: 1,
            epochs: 1,
            learning_rate: 20.0,
            anneal_factor: 0.25,
            patience: 1,
            clip_norm: 5.0,
            holdout_denominator: 500,
        }
    }
}

impl CharLmConfig {
    pub fn full_scale() -> Self {
        CharLmConfig {
            char_embed_dim: 100,
            hidden_size: 2048,
            ..CharLmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let fail = |m: String| Err(LmError::Config(m));
        if self.char_embed_dim == 0 || self.hidden_size == 0 || self.sequence_length == 0 {
            return fail("dimensions and sequence length must be positive".into());
        }
        if self.num_layers != 1 {
            return fail(format!("only single-layer models are supported, got {}", self.num_layers));
        }
        if self.mini_batch != 1 {
            return fail(format!("only mini-batch size 1 is supported, got {}", self.mini_batch));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return fail(format!("anneal factor {} not in (0, 1]", self.anneal_factor));
        }
        if self.holdout_denominator < 3 {
            return fail("holdout denominator must be at least 3".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip norm must be positive".into());
        }
        Ok(())
    }
}

/// Recurrent state carried between calls.
pub type LmState = LstmState;

/// Result of [`CharLm::lm_forward`]: `logits[t]` scores the character at
/// position `t + 1`.
#[derive(Debug, Clone)]
pub struct LmOutput {
    pub logits: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub final_state: LmState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharLm {
    vocab: CharVocabulary,
    direction: Direction,
    pub embedding: Matrix,
    pub lstm: Lstm,
    pub decoder: Linear,
}

struct Dropout<'a, R: Rng> {
    p: f64,
    rng: &'a mut R,
}

impl CharLm {
    pub fn new<R: Rng + ?Sized>(
        vocab: CharVocabulary,
        direction: Direction,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let symbols = vocab.len() + 1;
        CharLm {
            embedding: Matrix::uniform(symbols, embed_dim, 0.1, rng),
            lstm: Lstm::new(embed_dim, hidden, rng),
            decoder: Linear::new(hidden, symbols, rng),
            vocab,
            direction,
        }
    }

    /// All parameters zero: every logit row is identical and the softmax is
    /// uniform over `vocab.len() + 1` symbols.
    pub fn zeros(vocab: CharVocabulary, direction: Direction, embed_dim: usize, hidden: usize) -> Self {
        let symbols = vocab.len() + 1;
        CharLm {
            embedding: Matrix::zeros(symbols, embed_dim),
            lstm: Lstm::zeros(embed_dim, hidden),
            decoder: Linear::zeros(hidden, symbols),
            vocab,
            direction,
        }
    }

    pub fn vocab(&self) -> &CharVocabulary {
        &self.vocab
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Vocabulary size including UNK.
    pub fn num_symbols(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn unk_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size()
    }

    pub fn initial_state(&self) -> LmState {
        LmState::zeros(self.hidden_size())
    }

    pub fn index_of(&self, c: char) -> usize {
        self.vocab.index_of(c).unwrap_or(self.unk_index())
    }

    /// Indices of `text` in reading order; unknown characters map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.index_of(c)).collect()
    }

    /// Indices in the order this model consumes them (reversed for backward
    /// models).
    pub fn encode_directional(&self, text: &str) -> Vec<usize> {
        let mut idx = self.encode(text);
        if self.direction == Direction::Backward {
            idx.reverse();
        }
        idx
    }

    fn check_indices(&self, chars: &[usize]) -> Result<(), LmError> {
        if chars.is_empty() {
            return Err(LmError::EmptyInput);
        }
        let size = self.num_symbols();
        match chars.iter().find(|&&i| i >= size) {
            Some(&index) => Err(LmError::IndexOutOfRange { index, size }),
            None => Ok(()),
        }
    }

    fn run<R: Rng>(
        &self,
        chars: &[usize],
        state: &LmState,
        mut dropout: Option<Dropout<'_, R>>,
    ) -> (Vec<Vec<f64>>, LstmTrace, Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>) {
        let mut inputs: Vec<Vec<f64>> = chars.iter().map(|&c| self.embedding.row(c).to_vec()).collect();
        let mut in_masks = Vec::new();
        if let Some(d) = dropout.as_mut() {
            for x in inputs.iter_mut() {
                let m = nn::dropout_mask(x.len(), d.p, d.rng);
                x.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                in_masks.push(m);
            }
        }
        let trace = self.lstm.forward(inputs.iter().map(Vec::as_slice), state);
        let mut outputs: Vec<Vec<f64>> = trace.steps.iter().map(|s| s.h.clone()).collect();
        let mut out_masks = Vec::new();
        if let Some(d) = dropout.as_mut() {
            for h in outputs.iter_mut() {
                let m = nn::dropout_mask(h.len(), d.p, d.rng);
                h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                out_masks.push(m);
            }
        }
        let masks = dropout.map(|_| (in_masks, out_masks));
        (outputs, trace, masks)
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn lm_forward(&self, chars: &[usize], state: &LmState) -> Result<LmOutput, LmError> {
        self.check_indices(chars)?;
        let (outputs, trace, _) = self.run::<rand_chacha::ChaCha8Rng>(chars, state, None);
        let logits = outputs.iter().map(|h| self.decoder.forward(h)).collect();
        Ok(LmOutput {
            logits,
            hidden: outputs,
            final_state: trace.final_state().expect("non-empty input"),
        })
    }

    /// Hidden states only, skipping the output projection.
    pub fn hidden_states(&self, chars: &[usize], state: &LmState) -> Result<Vec<Vec<f64>>, LmError> {
        self.check_indices(chars)?;
        let trace = self
            .lstm
            .forward(chars.iter().map(|&c| self.embedding.row(c)), state);
        Ok(trace.steps.into_iter().map(|s| s.h).collect())
    }

    /// Mean next-character cross-entropy of `targets` given `inputs`, plus
    /// the gradient of that mean, in evaluation mode.
    pub fn loss_and_gradient(
        &self,
        inputs: &[usize],
        targets: &[usize],
        state: &LmState,
    ) -> Result<(f64, CharLm), LmError> {
        let mut grads = nn::zeros_like(self);
        let (loss, _) = self.accumulate_gradient::<rand_chacha::ChaCha8Rng>(inputs, targets, state, None, &mut grads)?;
        Ok((loss, grads))
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, inputs: &[usize], targets: &[usize], state: &LmState) -> Result<f64, LmError> {
        self.check_indices(targets)?;
        let out = self.lm_forward(inputs, state)?;
        Ok(mean_cross_entropy(&out.logits, targets))
    }

    fn accumulate_gradient<R: Rng>(
        &self,
        inputs: &[usize],
        targets: &[usize],
        state: &LmState,
        dropout: Option<(f64, &mut R)>,
        grads: &mut CharLm,
    ) -> Result<(f64, LmState), LmError> {
        self.check_indices(inputs)?;
        self.check_indices(targets)?;
        if inputs.len() != targets.len() {
            return Err(LmError::Config("inputs and targets differ in length".into()));
        }
        let dropout = dropout.map(|(p, rng)| Dropout { p, rng });
        let (outputs, trace, masks) = self.run(inputs, state, dropout);
        let t_len = inputs.len() as f64;
        let mut loss = 0.0;
        let mut dh = Vec::with_capacity(inputs.len());
        let mut probs = vec![0.0; self.num_symbols()];
        for (t, h) in outputs.iter().enumerate() {
            let logits = self.decoder.forward(h);
            nn::softmax_into(&logits, &mut probs);
            loss -= probs[targets[t]].max(f64::MIN_POSITIVE).ln();
            let mut dlogits: Vec<f64> = probs.iter().map(|p| p / t_len).collect();
            dlogits[targets[t]] -= 1.0 / t_len;
            let mut dht = vec![0.0; self.hidden_size()];
            self.decoder.backward(h, &dlogits, &mut grads.decoder, Some(&mut dht));
            if let Some((_, out_masks)) = &masks {
                dht.iter_mut().zip(&out_masks[t]).for_each(|(v, k)| *v *= k);
            }
            dh.push(dht);
        }
        let dx = self.lstm.backward(&trace, &dh, &mut grads.lstm);
        for (t, mut d) in dx.into_iter().enumerate() {
            if let Some((in_masks, _)) = &masks {
                d.iter_mut().zip(&in_masks[t]).for_each(|(v, k)| *v *= k);
            }
            nn::axpy(1.0, &d, grads.embedding.row_mut(inputs[t]));
        }
        Ok((loss / t_len, trace.final_state().expect("non-empty input")))
    }

    /// Mean cross-entropy of predicting `idx[1..]` from a zero state.
    pub fn sequence_loss(&self, idx: &[usize]) -> Result<f64, LmError> {
        if idx.len() < 2 {
            return Err(LmError::TooShort {
                needed: 2,
                found: idx.len(),
            });
        }
        self.loss(&idx[..idx.len() - 1], &idx[1..], &self.initial_state())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), LmError> {
        let header = LmHeader {
            direction: self.direction,
            vocab_size: self.vocab.len(),
            embed_dim: self.embed_dim(),
            hidden_size: self.hidden_size(),
            vocabulary: self.vocab.code_points(),
        };
        let json = serde_json::to_string(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        let names = tensor_names();
        let mut cw = ContainerWriter::new(w, MODEL_KIND, &json, names.len())?;
        for (name, t) in names.iter().zip(self.tensors()) {
            cw.tensor(name, t)?;
        }
        cw.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, LmError> {
        let mut cr = ContainerReader::open(r, MODEL_KIND)?;
        let header: LmHeader =
            serde_json::from_str(cr.header()).map_err(|e| FormatError::Header(e.to_string()))?;
        if header.vocabulary.len() != header.vocab_size {
            return Err(FormatError::Header(format!(
                "vocabulary lists {} characters but declares {}",
                header.vocabulary.len(),
                header.vocab_size
            ))
            .into());
        }
        let chars = header
            .vocabulary
            .iter()
            .map(|&cp| char::from_u32(cp).ok_or_else(|| FormatError::Header(format!("invalid code point {cp}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = CharVocabulary::exact(chars);
        if vocab.len() != header.vocab_size {
            return Err(FormatError::Header("vocabulary contains duplicates".into()).into());
        }
        let mut model = CharLm::zeros(vocab, header.direction, header.embed_dim, header.hidden_size);
        for (name, t) in tensor_names().iter().zip(model.tensors_mut()) {
            cr.tensor_into(name, t)?;
        }
        cr.finish()?;
        Ok(model)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), LmError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, LmError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn tensor_names() -> [&'static str; 6] {
    [
        "embedding",
        "lstm.w_ih",
        "lstm.w_hh",
        "lstm.bias",
        "decoder.weight",
        "decoder.bias",
    ]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LmHeader {
    direction: Direction,
    vocab_size: usize,
    embed_dim: usize,
    hidden_size: usize,
    vocabulary: Vec<u32>,
}

impl Parameters for CharLm {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.embedding];
        v.extend(self.lstm.tensors());
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.lstm.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v
    }
}

/// Natural-log probability of `target` under `softmax(logits)`.
pub fn log_prob(logits: &[f64], target: usize) -> f64 {
    logits[target] - nn::log_sum_exp(logits)
}

fn mean_cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(l, &t)| -log_prob(l, t))
        .sum();
    total / targets.len() as f64
}
