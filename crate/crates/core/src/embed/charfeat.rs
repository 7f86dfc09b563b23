use rand::Rng;

use crate::corpus::CharVocabulary;
use crate::nn::{self, Lstm, LstmState, LstmTrace, Matrix, Parameters};

pub const DEFAULT_CHAR_EMBED_DIM: usize = 25;
pub const DEFAULT_CHAR_HIDDEN: usize = 25;

/// Trainable word-internal character features: a bidirectional LSTM over the
/// characters of one token, returning the final state of each direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFeatureEncoder {
    vocab: CharVocabulary,
    pub embedding: Matrix,
    pub forward: Lstm,
    pub backward: Lstm,
}

/// Activations from [`CharFeatureEncoder::trace`], needed for
/// [`CharFeatureEncoder::backward`].
#[derive(Debug, Clone)]
pub struct CharFeatureTrace {
    chars: Vec<usize>,
    forward: LstmTrace,
    backward: LstmTrace,
}

impl CharFeatureEncoder {
    pub fn new<R: Rng + ?Sized>(
        vocab: CharVocabulary,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let symbols = vocab.len() + 1;
        CharFeatureEncoder {
            embedding: Matrix::uniform(symbols, embed_dim, (3.0 / embed_dim as f64).sqrt(), rng),
            forward: Lstm::new(embed_dim, hidden, rng),
            backward: Lstm::new(embed_dim, hidden, rng),
            vocab,
        }
    }

    pub fn zeros(vocab: CharVocabulary, embed_dim: usize, hidden: usize) -> Self {
        let symbols = vocab.len() + 1;
        CharFeatureEncoder {
            embedding: Matrix::zeros(symbols, embed_dim),
            forward: Lstm::zeros(embed_dim, hidden),
            backward: Lstm::zeros(embed_dim, hidden),
            vocab,
        }
    }

    pub fn vocab(&self) -> &CharVocabulary {
        &self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_size()
    }

    fn encode(&self, token: &str) -> Vec<usize> {
        let unk = self.vocab.len();
        token
            .chars()
            .map(|c| self.vocab.index_of(c).unwrap_or(unk))
            .collect()
    }

    pub fn trace(&self, token: &str) -> CharFeatureTrace {
        let chars = self.encode(token);
        let init = LstmState::zeros(self.hidden_size());
        let forward = self
            .forward
            .forward(chars.iter().map(|&c| self.embedding.row(c)), &init);
        let backward = self
            .backward
            .forward(chars.iter().rev().map(|&c| self.embedding.row(c)), &init);
        CharFeatureTrace {
            chars,
            forward,
            backward,
        }
    }

    /// `[forward final hidden ; backward final hidden]`; zeros for an empty
    /// token.
    pub fn output(&self, trace: &CharFeatureTrace) -> Vec<f64> {
        let h = self.hidden_size();
        let mut out = vec![0.0; 2 * h];
        if let (Some(f), Some(b)) = (trace.forward.steps.last(), trace.backward.steps.last()) {
            out[..h].copy_from_slice(&f.h);
            out[h..].copy_from_slice(&b.h);
        }
        out
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        self.output(&self.trace(token))
    }

    /// Accumulates the gradient of a loss with output gradient `d_out` into
    /// `grads`.
    pub fn backward(&self, trace: &CharFeatureTrace, d_out: &[f64], grads: &mut CharFeatureEncoder) {
        let h = self.hidden_size();
        let n = trace.chars.len();
        if n == 0 {
            return;
        }
        let mut dh = vec![vec![0.0; h]; n];
        dh[n - 1].copy_from_slice(&d_out[..h]);
        let dx_f = self.forward.backward(&trace.forward, &dh, &mut grads.forward);
        dh[n - 1].copy_from_slice(&d_out[h..]);
        let dx_b = self.backward.backward(&trace.backward, &dh, &mut grads.backward);
        for (t, &c) in trace.chars.iter().enumerate() {
            let row = grads.embedding.row_mut(c);
            nn::axpy(1.0, &dx_f[t], row);
            nn::axpy(1.0, &dx_b[n - 1 - t], row);
        }
    }
}

impl Parameters for CharFeatureEncoder {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.embedding];
        v.extend(self.forward.tensors());
        v.extend(self.backward.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.forward.tensors_mut());
        v.extend(self.backward.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> CharFeatureEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        CharFeatureEncoder::new(
            CharVocabulary::from_text("abcdefgſ"),
            DEFAULT_CHAR_EMBED_DIM,
            DEFAULT_CHAR_HIDDEN,
            &mut rng,
        )
    }

    #[test]
    fn output_shape_and_identity() {
        let e = encoder();
        assert_eq!(e.output_dim(), 50);
        let v = e.embed("ſag");
        assert_eq!(v.len(), 50);
        assert_eq!(v, e.embed("ſag"));
        assert_ne!(v, e.embed("gaſ"));
    }

    #[test]
    fn gradient_on_three_char_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = CharFeatureEncoder::new(CharVocabulary::from_text("abc"), 5, 4, &mut rng);
        let weights: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trace = e.trace("cab");
        let mut grads = nn::zeros_like(&e);
        e.backward(&trace, &weights, &mut grads);
        let numeric = central_difference(&e.flatten(), 1e-5, |p| {
            let mut q = e.clone();
            q.assign_flat(p);
            nn::dot(&q.embed("cab"), &weights)
        });
        let err = max_relative_error(&grads.flatten(), &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }
}
