use crate::charlm::{CharLm, Direction};
use crate::corpus::Sentence;

use super::EmbedError;

/// Contextual string embeddings from a pair of frozen character LMs.
///
/// The sentence is rendered with single spaces between tokens. For each
/// token, the forward part is the forward LM's hidden state after the token's
/// last character; the backward part is the backward LM's hidden state after
/// it has read (right to left) the token's first character.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEmbedder {
    forward: CharLm,
    backward: CharLm,
}

impl ContextualEmbedder {
    pub fn new(forward: CharLm, backward: CharLm) -> Result<Self, EmbedError> {
        if forward.direction() != Direction::Forward {
            return Err(EmbedError::Direction {
                slot: "forward",
                found: forward.direction(),
            });
        }
        if backward.direction() != Direction::Backward {
            return Err(EmbedError::Direction {
                slot: "backward",
                found: backward.direction(),
            });
        }
        Ok(ContextualEmbedder { forward, backward })
    }

    pub fn forward_lm(&self) -> &CharLm {
        &self.forward
    }

    pub fn backward_lm(&self) -> &CharLm {
        &self.backward
    }

    pub fn dim(&self) -> usize {
        self.forward.hidden_size() + self.backward.hidden_size()
    }

    pub fn embed(&self, sentence: &Sentence) -> Result<Vec<Vec<f64>>, EmbedError> {
        let text = sentence.render();
        let n = text.chars().count();
        let fwd_states = self
            .forward
            .hidden_states(&self.forward.encode_directional(&text), &self.forward.initial_state())?;
        let bwd_states = self
            .backward
            .hidden_states(&self.backward.encode_directional(&text), &self.backward.initial_state())?;
        let mut out = Vec::with_capacity(sentence.len());
        let mut start = 0;
        for token in sentence.tokens() {
            let len = token.text.chars().count();
            let last = start + len - 1;
            let mut v = Vec::with_capacity(self.dim());
            v.extend_from_slice(&fwd_states[last]);
            v.extend_from_slice(&bwd_states[n - 1 - start]);
            out.push(v);
            start += len + 1;
        }
        Ok(out)
    }
}

pub fn contextual_embed(
    forward: &CharLm,
    backward: &CharLm,
    sentence: &Sentence,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    ContextualEmbedder::new(forward.clone(), backward.clone())?.embed(sentence)
}
