//! Synthetic masked language modeling (SMLM) corpus corruption.
//!
//! Each character of a clean source corpus is independently kept with
//! probability `p_keep`. Otherwise it is replaced by the mask character with
//! probability `p_mask_given_change`, or by a character drawn uniformly from
//! the target-domain vocabulary. The result imitates noisy OCR output using
//! nothing from the target domain but its character inventory.
//!
//! Newlines are never touched, so line structure survives; every other
//! character, including spaces, is eligible. Randomness comes from
//! [`ChaCha8Rng`] seeded with [`SmlmConfig::seed`]: the ChaCha stream is
//! specified independently of platform and word size, so a given
//! `(input, vocabulary, config)` always yields the same bytes.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CharVocabulary, CorpusError};

/// Mask symbol candidates in order of preference.
pub const DEFAULT_MASK_CANDIDATES: [char; 6] = ['¶', '§', '¤', '†', '‡', '\u{25A1}'];

/// Probability of masking once a character has been selected for change.
pub const P_MASK_GIVEN_CHANGE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SmlmError {
    #[error("every mask candidate occurs in the target vocabulary")]
    MaskCandidatesExhausted,
    #[error("mask character {0:?} occurs in the target vocabulary")]
    MaskInVocabulary(char),
    #[error("target vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no characters were processed")]
    EmptyInput,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// First candidate that does not occur in `vocab`.
pub fn select_mask_char(vocab: &CharVocabulary, candidates: &[char]) -> Result<char, SmlmError> {
    candidates
        .iter()
        .copied()
        .find(|&c| !vocab.contains(c))
        .ok_or(SmlmError::MaskCandidatesExhausted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmlmConfig {
    pub p_keep: f64,
    pub p_mask_given_change: f64,
    pub mask_char: char,
    pub seed: u64,
}

impl Default for SmlmConfig {
    fn default() -> Self {
        SmlmConfig {
            p_keep: 0.90,
            p_mask_given_change: P_MASK_GIVEN_CHANGE,
            mask_char: DEFAULT_MASK_CANDIDATES[0],
            seed: 0,
        }
    }
}

impl SmlmConfig {
    pub fn p_replace_given_change(&self) -> f64 {
        1.0 - self.p_mask_given_change
    }

    pub fn validate(&self) -> Result<(), SmlmError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SmlmError::InvalidConfig(format!("{name} = {p} is not a probability")))
            }
        };
        prob("p_keep", self.p_keep)?;
        prob("p_mask_given_change", self.p_mask_given_change)?;
        if self.mask_char == '\n' {
            return Err(SmlmError::InvalidConfig("mask character cannot be a newline".into()));
        }
        Ok(())
    }
}

/// Action counts; `kept + masked + replaced == total_chars`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionStats {
    pub total_chars: u64,
    pub kept: u64,
    pub masked: u64,
    pub replaced: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRates {
    pub keep: f64,
    pub mask: f64,
    pub replace: f64,
}

/// Empirical action rates.
pub fn corruption_stats(stats: &CorruptionStats) -> Result<CorruptionRates, SmlmError> {
    if stats.total_chars == 0 {
        return Err(SmlmError::EmptyInput);
    }
    let n = stats.total_chars as f64;
    Ok(CorruptionRates {
        keep: stats.kept as f64 / n,
        mask: stats.masked as f64 / n,
        replace: stats.replaced as f64 / n,
    })
}

/// Machine-readable summary written by `histtag smlm --stats`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmlmReport {
    pub config: SmlmConfig,
    pub vocabulary_size: usize,
    pub stats: CorruptionStats,
    pub rates: CorruptionRates,
}

/// Stateful corrupter; one RNG stream runs across all lines it processes.
pub struct SmlmTransformer {
    vocab: Vec<char>,
    config: SmlmConfig,
    rng: ChaCha8Rng,
    stats: CorruptionStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Keep,
    Mask,
    Replace,
}

impl SmlmTransformer {
    pub fn new(vocab: &CharVocabulary, config: SmlmConfig) -> Result<Self, SmlmError> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(SmlmError::EmptyVocabulary);
        }
        if vocab.contains(config.mask_char) {
            return Err(SmlmError::MaskInVocabulary(config.mask_char));
        }
        Ok(SmlmTransformer {
            vocab: vocab.chars().to_vec(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            stats: CorruptionStats::default(),
        })
    }

    fn draw(&mut self) -> Action {
        let u: f64 = self.rng.gen();
        let mask_cut = self.config.p_keep + (1.0 - self.config.p_keep) * self.config.p_mask_given_change;
        if u < self.config.p_keep {
            Action::Keep
        } else if u < mask_cut {
            Action::Mask
        } else {
            Action::Replace
        }
    }

    /// Corrupts a single character.
    pub fn corrupt_char(&mut self, c: char) -> char {
        if c == '\n' {
            return c;
        }
        self.stats.total_chars += 1;
        match self.draw() {
            Action::Keep => {
                self.stats.kept += 1;
                c
            }
            Action::Mask => {
                self.stats.masked += 1;
                self.config.mask_char
            }
            Action::Replace => {
                self.stats.replaced += 1;
                self.vocab[self.rng.gen_range(0..self.vocab.len())]
            }
        }
    }

    pub fn transform_line(&mut self, line: &str) -> String {
        line.chars().map(|c| self.corrupt_char(c)).collect()
    }

    pub fn stats(&self) -> CorruptionStats {
        self.stats
    }
}

/// Corrupts every line of `lines`, writing them to `out` with `\n` endings.
pub fn smlm_transform<I, W>(
    lines: I,
    vocab: &CharVocabulary,
    config: &SmlmConfig,
    mut out: W,
) -> Result<CorruptionStats, SmlmError>
where
    I: IntoIterator<Item = Result<String, CorpusError>>,
    W: Write,
{
    let mut t = SmlmTransformer::new(vocab, config.clone())?;
    for line in lines {
        let corrupted = t.transform_line(&line?);
        out.write_all(corrupted.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(t.stats())
}

/// In-memory convenience wrapper around [`SmlmTransformer`]; newlines in
/// `text` pass through.
pub fn smlm_transform_str(
    text: &str,
    vocab: &CharVocabulary,
    config: &SmlmConfig,
) -> Result<(String, CorruptionStats), SmlmError> {
    let mut t = SmlmTransformer::new(vocab, config.clone())?;
    let out = text.chars().map(|c| t.corrupt_char(c)).collect();
    Ok((out, t.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SENTENCE: &str =
        "Dann habe der Mann erzählt, wie er in München am Bahnhof mit Blumen begrüßt worden sei.";

    fn config(p_keep: f64, seed: u64) -> SmlmConfig {
        SmlmConfig {
            p_keep,
            seed,
            ..SmlmConfig::default()
        }
    }

    #[test]
    fn mask_selection() {
        let abc = CharVocabulary::from_text("abc");
        assert_eq!(select_mask_char(&abc, &DEFAULT_MASK_CANDIDATES).unwrap(), '¶');
        let with_pilcrow = CharVocabulary::from_text("ab¶");
        assert_eq!(select_mask_char(&with_pilcrow, &['¶', '§']).unwrap(), '§');
        let all = CharVocabulary::from_text("¶§");
        assert!(matches!(
            select_mask_char(&all, &['¶', '§']),
            Err(SmlmError::MaskCandidatesExhausted)
        ));
    }

    #[test]
    fn identity_when_everything_is_kept() {
        let vocab = CharVocabulary::from_text("abcxyz");
        let (out, stats) = smlm_transform_str(SENTENCE, &vocab, &config(1.0, 9)).unwrap();
        assert_eq!(out, SENTENCE);
        assert_eq!(stats.masked + stats.replaced, 0);
        assert_eq!(stats.kept, SENTENCE.chars().count() as u64);
    }

    #[test]
    fn corrupted_sentence_keeps_its_shape() {
        let vocab = CharVocabulary::from_text("abcdefghijklmnopqrstuvwxyzſäöüABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,");
        let (out, stats) = smlm_transform_str(SENTENCE, &vocab, &config(0.9, 1)).unwrap();
        assert_eq!(out.chars().count(), SENTENCE.chars().count());
        assert_ne!(out, SENTENCE);
        assert_eq!(stats.kept + stats.masked + stats.replaced, stats.total_chars);
        assert_eq!(out.chars().filter(|&c| c == '¶').count() as u64, stats.masked);
    }

    #[test]
    fn mask_in_vocab_is_rejected() {
        let vocab = CharVocabulary::from_text("ab¶");
        assert!(matches!(
            SmlmTransformer::new(&vocab, config(0.9, 0)),
            Err(SmlmError::MaskInVocabulary('¶'))
        ));
    }

    #[test]
    fn empty_vocabulary_is_rejected() {
        let vocab = CharVocabulary::exact(std::iter::empty());
        assert!(matches!(
            SmlmTransformer::new(&vocab, config(0.9, 0)),
            Err(SmlmError::EmptyVocabulary)
        ));
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let vocab = CharVocabulary::from_text("ab");
        assert!(SmlmTransformer::new(&vocab, config(1.5, 0)).is_err());
    }

    #[test]
    fn newlines_are_exempt() {
        let vocab = CharVocabulary::from_text("xyz");
        let text = "ab\ncd\n\nef";
        let (out, stats) = smlm_transform_str(text, &vocab, &config(0.0, 3)).unwrap();
        assert_eq!(out.lines().count(), text.lines().count());
        assert_eq!(out.match_indices('\n').collect::<Vec<_>>().len(), 3);
        assert_eq!(stats.total_chars, 6);
        assert_eq!(stats.kept, 0);
    }

    #[test]
    fn rates() {
        let r = corruption_stats(&CorruptionStats {
            total_chars: 10,
            kept: 9,
            masked: 0,
            replaced: 1,
        })
        .unwrap();
        assert_eq!((r.keep, r.mask, r.replace), (0.9, 0.0, 0.1));
        let r = corruption_stats(&CorruptionStats {
            total_chars: 4,
            kept: 4,
            masked: 0,
            replaced: 0,
        })
        .unwrap();
        assert_eq!((r.keep, r.mask, r.replace), (1.0, 0.0, 0.0));
        assert!(matches!(
            corruption_stats(&CorruptionStats::default()),
            Err(SmlmError::EmptyInput)
        ));
    }

    #[test]
    fn streaming_matches_in_memory() {
        let vocab = CharVocabulary::from_text("qwertz");
        let text = "erste Zeile\nzweite Zeile\ndritte";
        let lines = text.lines().map(|l| Ok(l.to_string()));
        let mut out = Vec::new();
        let stats = smlm_transform(lines, &vocab, &config(0.7, 5), &mut out).unwrap();
        let (expected, expected_stats) = smlm_transform_str(text, &vocab, &config(0.7, 5)).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{expected}\n"));
        assert_eq!(stats, expected_stats);
    }

    proptest! {
        #[test]
        fn rates_recompute_by_hand(kept in 0u64..1000, masked in 0u64..1000, replaced in 0u64..1000) {
            prop_assume!(kept + masked + replaced > 0);
            let total = kept + masked + replaced;
            let r = corruption_stats(&CorruptionStats { total_chars: total, kept, masked, replaced }).unwrap();
            prop_assert_eq!(r.keep, kept as f64 / total as f64);
            prop_assert_eq!(r.mask, masked as f64 / total as f64);
            prop_assert_eq!(r.replace, replaced as f64 / total as f64);
            prop_assert!((r.keep + r.mask + r.replace - 1.0).abs() < 1e-12);
        }

        #[test]
        fn output_is_original_mask_or_vocab(text in "[a-zäöü \n]{0,200}", seed in 0u64..1000, p in 0.0f64..1.0) {
            let vocab = CharVocabulary::from_text("XYZ0");
            let cfg = config(p, seed);
            let (out, stats) = smlm_transform_str(&text, &vocab, &cfg).unwrap();
            prop_assert_eq!(out.chars().count(), text.chars().count());
            for (a, b) in text.chars().zip(out.chars()) {
                prop_assert!(a == b || b == '¶' || vocab.contains(b));
                if a == '\n' { prop_assert_eq!(b, '\n'); }
            }
            prop_assert_eq!(stats.kept + stats.masked + stats.replaced, stats.total_chars);
            let (again, _) = smlm_transform_str(&text, &vocab, &cfg).unwrap();
            prop_assert_eq!(again, out);
        }
    }
}
