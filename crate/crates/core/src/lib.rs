//! Named entity recognition for noisy historic text.
//!
//! The crate covers the whole pipeline:
//!
//! - [`corpus`]: CoNLL column files, tag schemes (IOB2/IOBES), entity spans,
//!   character vocabularies and streaming plain-text corpora.
//! - [`smlm`]: synthetic masked language modeling, a character-level
//!   corruption of a clean corpus that keeps, masks or replaces each character
//!   with symbols from a target-domain vocabulary.
//! - [`charlm`]: forward/backward character LSTM language models, their
//!   training loop and sentence-averaged perplexity.
//! - [`embed`]: word-vector tables, trainable character features, contextual
//!   string embeddings read from language-model states, and stacking.
//! - [`tagger`]: a Bi-LSTM-CRF with IOBES transition constraints, Viterbi
//!   decoding and SGD training with learning-rate annealing on plateaus.
//! - [`eval`]: span-level precision/recall/F1 with CoNLL scorer semantics and
//!   multi-run averaging.
//!
//! Everything numeric runs in `f64` with hand-written gradients (see [`nn`]);
//! model files store parameters as little-endian `f32` (see [`container`]).

pub mod charlm;
pub mod container;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod nn;
pub mod schedule;
pub mod smlm;
pub mod tagger;
pub mod toy;

pub use corpus::{
    CharVocabulary, EntitySpan, Sentence, Split, TagScheme, TaggedCorpus, Token,
};

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
pub(crate) mod testutil;
