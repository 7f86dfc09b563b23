//! Per-token vectors: static word tables, trainable character features and
//! contextual LM states, concatenated in a fixed order by
//! [`StackedEmbedder`].

mod charfeat;
mod contextual;
mod word;

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charlm::{CharLm, Direction, LmError};
use crate::container::file_sha256;
use crate::corpus::{CharVocabulary, Sentence};
use crate::nn::{Matrix, Parameters};

pub use charfeat::{CharFeatureEncoder, CharFeatureTrace, DEFAULT_CHAR_EMBED_DIM, DEFAULT_CHAR_HIDDEN};
pub use contextual::{contextual_embed, ContextualEmbedder};
pub use word::{load_vectors, WordEmbeddingTable};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{slot} language model has direction {found}")]
    Direction { slot: &'static str, found: Direction },
    #[error("embedder has no components")]
    NoComponents,
    #[error("{path}: content hash {found} does not match recorded {expected}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("component {0} was built in memory and has no file to reference")]
    NoSource(usize),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Declarative description of one embedding component, as written in run
/// configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComponentSpec {
    /// Pre-trained word vectors in text format.
    Word { path: PathBuf },
    /// Trainable character features.
    Char {
        #[serde(default = "default_char_embed")]
        embed_dim: usize,
        #[serde(default = "default_char_hidden")]
        hidden: usize,
    },
    /// Frozen forward and backward character LMs.
    Contextual { forward: PathBuf, backward: PathBuf },
}

fn default_char_embed() -> usize {
    DEFAULT_CHAR_EMBED_DIM
}

fn default_char_hidden() -> usize {
    DEFAULT_CHAR_HIDDEN
}

/// A file a component was loaded from, with its SHA-256 at load time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self, EmbedError> {
        Ok(FileRef {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }

    /// Re-hashes the file and fails if it changed.
    pub fn verify(&self) -> Result<(), EmbedError> {
        let found = file_sha256(&self.path)?;
        if found != self.sha256 {
            return Err(EmbedError::HashMismatch {
                path: self.path.clone(),
                expected: self.sha256.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingComponent {
    Word {
        table: Arc<WordEmbeddingTable>,
        source: Option<FileRef>,
    },
    CharFeatures(CharFeatureEncoder),
    Contextual {
        embedder: Arc<ContextualEmbedder>,
        sources: Option<(FileRef, FileRef)>,
    },
}

impl EmbeddingComponent {
    pub fn word(table: WordEmbeddingTable) -> Self {
        EmbeddingComponent::Word {
            table: Arc::new(table),
            source: None,
        }
    }

    pub fn contextual(embedder: ContextualEmbedder) -> Self {
        EmbeddingComponent::Contextual {
            embedder: Arc::new(embedder),
            sources: None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingComponent::Word { table, .. } => table.dim(),
            EmbeddingComponent::CharFeatures(e) => e.output_dim(),
            EmbeddingComponent::Contextual { embedder, .. } => embedder.dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, EmbeddingComponent::CharFeatures(_))
    }

    fn static_block(&self, sentence: &Sentence) -> Result<Option<Vec<Vec<f64>>>, EmbedError> {
        Ok(match self {
            EmbeddingComponent::Word { table, .. } => Some(
                sentence
                    .tokens()
                    .iter()
                    .map(|t| table.lookup(&t.text))
                    .collect(),
            ),
            EmbeddingComponent::Contextual { embedder, .. } => Some(embedder.embed(sentence)?),
            EmbeddingComponent::CharFeatures(_) => None,
        })
    }
}

/// Frozen component outputs for one sentence, computed once and reused across
/// training epochs.
#[derive(Debug, Clone)]
pub struct StaticFeatures {
    blocks: Vec<Option<Vec<Vec<f64>>>>,
}

/// Per-token character traces for each trainable component, in component
/// order.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    char_traces: Vec<Vec<CharFeatureTrace>>,
}

/// Ordered concatenation of embedding components.
#[derive(Debug, Clone)]
pub struct StackedEmbedder {
    components: Vec<EmbeddingComponent>,
}

impl StackedEmbedder {
    pub fn new(components: Vec<EmbeddingComponent>) -> Result<Self, EmbedError> {
        if components.is_empty() {
            return Err(EmbedError::NoComponents);
        }
        Ok(StackedEmbedder { components })
    }

    /// Loads every file a spec references. Character encoders are
    /// initialized from `rng` over `char_vocab`.
    pub fn from_specs<R: Rng + ?Sized>(
        specs: &[ComponentSpec],
        char_vocab: &CharVocabulary,
        rng: &mut R,
    ) -> Result<Self, EmbedError> {
        let mut components = Vec::with_capacity(specs.len());
        for spec in specs {
            components.push(match spec {
                ComponentSpec::Word { path } => EmbeddingComponent::Word {
                    table: Arc::new(load_vectors(path)?),
                    source: Some(FileRef::of(path)?),
                },
                ComponentSpec::Char { embed_dim, hidden } => EmbeddingComponent::CharFeatures(
                    CharFeatureEncoder::new(char_vocab.clone(), *embed_dim, *hidden, rng),
                ),
                ComponentSpec::Contextual { forward, backward } => EmbeddingComponent::Contextual {
                    embedder: Arc::new(ContextualEmbedder::new(
                        CharLm::load(forward)?,
                        CharLm::load(backward)?,
                    )?),
                    sources: Some((FileRef::of(forward)?, FileRef::of(backward)?)),
                },
            });
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[EmbeddingComponent] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [EmbeddingComponent] {
        &mut self.components
    }

    pub fn component_dims(&self) -> Vec<usize> {
        self.components.iter().map(EmbeddingComponent::dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.component_dims().iter().sum()
    }

    pub fn static_features(&self, sentence: &Sentence) -> Result<StaticFeatures, EmbedError> {
        let blocks = self
            .components
            .iter()
            .map(|c| c.static_block(sentence))
            .collect::<Result<_, _>>()?;
        Ok(StaticFeatures { blocks })
    }

    /// Concatenates cached static blocks with freshly computed trainable
    /// blocks.
    pub fn assemble(&self, sentence: &Sentence, statics: &StaticFeatures) -> (Vec<Vec<f64>>, EmbedTrace) {
        let dim = self.dim();
        let mut vectors: Vec<Vec<f64>> = (0..sentence.len()).map(|_| Vec::with_capacity(dim)).collect();
        let mut char_traces = Vec::new();
        for (component, block) in self.components.iter().zip(&statics.blocks) {
            match (component, block) {
                (_, Some(block)) => {
                    for (v, b) in vectors.iter_mut().zip(block) {
                        v.extend_from_slice(b);
                    }
                }
                (EmbeddingComponent::CharFeatures(enc), None) => {
                    let traces: Vec<CharFeatureTrace> =
                        sentence.tokens().iter().map(|t| enc.trace(&t.text)).collect();
                    for (v, tr) in vectors.iter_mut().zip(&traces) {
                        v.extend(enc.output(tr));
                    }
                    char_traces.push(traces);
                }
                (_, None) => unreachable!("static component without cached block"),
            }
        }
        (vectors, EmbedTrace { char_traces })
    }

    /// Backpropagates token-vector gradients into the trainable components
    /// of `grads`. Static blocks receive nothing.
    pub fn backward(&self, trace: &EmbedTrace, d_vectors: &[Vec<f64>], grads: &mut StackedEmbedder) {
        let mut offset = 0;
        let mut k = 0;
        for (component, g) in self.components.iter().zip(grads.components.iter_mut()) {
            let dim = component.dim();
            if let (EmbeddingComponent::CharFeatures(enc), EmbeddingComponent::CharFeatures(genc)) =
                (component, g)
            {
                for (tr, d) in trace.char_traces[k].iter().zip(d_vectors) {
                    enc.backward(tr, &d[offset..offset + dim], genc);
                }
                k += 1;
            }
            offset += dim;
        }
    }

    /// One vector per token: component outputs concatenated in declared order.
    pub fn stack_embed(&self, sentence: &Sentence) -> Result<Vec<Vec<f64>>, EmbedError> {
        let statics = self.static_features(sentence)?;
        Ok(self.assemble(sentence, &statics).0)
    }
}

impl Parameters for StackedEmbedder {
    fn tensors(&self) -> Vec<&Matrix> {
        self.components
            .iter()
            .flat_map(|c| match c {
                EmbeddingComponent::CharFeatures(e) => e.tensors(),
                _ => Vec::new(),
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.components
            .iter_mut()
            .flat_map(|c| match c {
                EmbeddingComponent::CharFeatures(e) => e.tensors_mut(),
                _ => Vec::new(),
            })
            .collect()
    }
}

pub fn stack_embed(embedder: &StackedEmbedder, sentence: &Sentence) -> Result<Vec<Vec<f64>>, EmbedError> {
    embedder.stack_embed(sentence)
}

pub fn char_feature_embed(encoder: &CharFeatureEncoder, token: &crate::corpus::Token) -> Vec<f64> {
    encoder.embed(&token.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use crate::nn;
    use crate::testutil::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sentence(words: &[&str]) -> Sentence {
        Sentence::new(words.iter().map(|w| Token::new(*w).unwrap()).collect()).unwrap()
    }

    fn table(dim: usize, seed: f64) -> WordEmbeddingTable {
        let mut t = WordEmbeddingTable::new(dim);
        for (i, w) in ["Wien", "liegt", "an", "der", "Donau"].iter().enumerate() {
            t.insert(*w, (0..dim).map(|k| seed + i as f64 + 0.1 * k as f64).collect());
        }
        t
    }

    fn char_component(seed: u64) -> EmbeddingComponent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingComponent::CharFeatures(CharFeatureEncoder::new(
            CharVocabulary::from_text("WienlgtaDudor"),
            4,
            3,
            &mut rng,
        ))
    }

    #[test]
    fn dims_add_up() {
        let e = StackedEmbedder::new(vec![
            EmbeddingComponent::word(table(3, 0.0)),
            EmbeddingComponent::word(table(4, 1.0)),
        ])
        .unwrap();
        assert_eq!(e.dim(), 7);
        let v = e.stack_embed(&sentence(&["Wien", "liegt", "Linz"])).unwrap();
        assert!(v.iter().all(|x| x.len() == 7));
        assert_eq!(&v[2], &vec![0.0; 7]);
    }

    #[test]
    fn single_component_is_passthrough() {
        let t = table(3, 0.0);
        let e = StackedEmbedder::new(vec![EmbeddingComponent::word(t.clone())]).unwrap();
        let s = sentence(&["an", "der", "Donau"]);
        let v = e.stack_embed(&s).unwrap();
        for (tok, vec) in s.tokens().iter().zip(&v) {
            assert_eq!(vec, &t.lookup(&tok.text));
        }
    }

    #[test]
    fn permuting_components_permutes_blocks() {
        let a = EmbeddingComponent::word(table(3, 0.0));
        let b = char_component(2);
        let c = EmbeddingComponent::word(table(2, 5.0));
        let s = sentence(&["Wien", "liegt", "an", "der", "Donau"]);
        let abc = StackedEmbedder::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let cab = StackedEmbedder::new(vec![c, a, b]).unwrap();
        let x = abc.stack_embed(&s).unwrap();
        let y = cab.stack_embed(&s).unwrap();
        for (u, v) in x.iter().zip(&y) {
            // abc blocks: [0..3) [3..9) [9..11); cab blocks: [0..2) [2..5) [5..11)
            assert_eq!(&u[0..3], &v[2..5]);
            assert_eq!(&u[3..9], &v[5..11]);
            assert_eq!(&u[9..11], &v[0..2]);
        }
    }

    #[test]
    fn empty_embedder_is_rejected() {
        assert!(matches!(StackedEmbedder::new(vec![]), Err(EmbedError::NoComponents)));
    }

    #[test]
    fn only_character_features_receive_gradient() {
        let e = StackedEmbedder::new(vec![
            EmbeddingComponent::word(table(3, 0.0)),
            char_component(9),
        ])
        .unwrap();
        let s = sentence(&["Wien", "an", "Donau"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weights: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..e.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let loss = |emb: &StackedEmbedder| -> f64 {
            emb.stack_embed(&s)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(v, w)| nn::dot(v, w))
                .sum()
        };
        let statics = e.static_features(&s).unwrap();
        let (_, trace) = e.assemble(&s, &statics);
        let mut grads = nn::zeros_like(&e);
        e.backward(&trace, &weights, &mut grads);
        // the word table is not a parameter at all
        assert_eq!(e.num_parameters(), match &e.components()[1] {
            EmbeddingComponent::CharFeatures(c) => c.num_parameters(),
            _ => unreachable!(),
        });
        let numeric = central_difference(&e.flatten(), 1e-5, |p| {
            let mut q = e.clone();
            q.assign_flat(p);
            loss(&q)
        });
        let analytic = grads.flatten();
        assert!(analytic.iter().any(|g| g.abs() > 1e-6));
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn spec_parsing() {
        #[derive(Deserialize)]
        struct Wrapper {
            components: Vec<ComponentSpec>,
        }
        let w: Wrapper = toml::from_str(
            r#"
            [[components]]
            kind = "word"
            path = "vectors.txt"
            [[components]]
            kind = "char"
            [[components]]
            kind = "contextual"
            forward = "f.bin"
            backward = "b.bin"
            "#,
        )
        .unwrap();
        assert_eq!(
            w.components[1],
            ComponentSpec::Char {
                embed_dim: 25,
                hidden: 25
            }
        );
        assert!(toml::from_str::<Wrapper>("[[components]]\nkind = \"char\"\nsize = 3\n").is_err());
        assert!(toml::from_str::<Wrapper>("[[components]]\nkind = \"bert\"\n").is_err());
    }
}
