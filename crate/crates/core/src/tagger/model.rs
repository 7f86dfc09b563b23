use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::charlm::CharLm;
use crate::container::{ContainerReader, ContainerWriter, FormatError};
use crate::corpus::{convert_scheme, CharVocabulary, Sentence, TagScheme, TaggedCorpus};
use crate::embed::{
    load_vectors, CharFeatureEncoder, ContextualEmbedder, EmbedError, EmbedTrace, EmbeddingComponent, FileRef,
    StackedEmbedder, StaticFeatures,
};
use crate::nn::{self, Linear, Lstm, LstmState, LstmTrace, Matrix, Parameters};

use super::{CrfLayer, TagSet, TaggerError};

pub const MODEL_KIND: &str = "ner";

/// Stacked embeddings, a bidirectional LSTM over tokens, a linear map to
/// per-tag emission scores and an IOBES-constrained CRF.
#[derive(Debug, Clone)]
pub struct NerModel {
    tagset: TagSet,
    pub embedder: StackedEmbedder,
    pub forward: Lstm,
    pub backward: Lstm,
    pub projection: Linear,
    pub crf: CrfLayer,
}

/// Activations of one emission pass, consumed by
/// [`NerModel::emissions_backward`].
#[derive(Debug, Clone)]
pub struct EmissionTrace {
    embed: EmbedTrace,
    features: Vec<Vec<f64>>,
    forward: LstmTrace,
    backward: LstmTrace,
}

impl NerModel {
    pub fn new<R: Rng + ?Sized>(tagset: TagSet, embedder: StackedEmbedder, lstm_hidden: usize, rng: &mut R) -> Self {
        let input = embedder.dim();
        NerModel {
            forward: Lstm::new(input, lstm_hidden, rng),
            backward: Lstm::new(input, lstm_hidden, rng),
            projection: Linear::new(2 * lstm_hidden, tagset.len(), rng),
            crf: CrfLayer::iobes(&tagset),
            embedder,
            tagset,
        }
    }

    /// All trainable weights zero; the embedder is kept as given.
    pub fn zeros(tagset: TagSet, embedder: StackedEmbedder, lstm_hidden: usize) -> Self {
        let input = embedder.dim();
        NerModel {
            forward: Lstm::zeros(input, lstm_hidden),
            backward: Lstm::zeros(input, lstm_hidden),
            projection: Linear::zeros(2 * lstm_hidden, tagset.len()),
            crf: CrfLayer::iobes(&tagset),
            embedder,
            tagset,
        }
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn lstm_hidden(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn emissions_with(&self, sentence: &Sentence, statics: &StaticFeatures) -> (Vec<Vec<f64>>, EmissionTrace) {
        let (inputs, embed) = self.embedder.assemble(sentence, statics);
        let h = self.lstm_hidden();
        let init = LstmState::zeros(h);
        let forward = self.forward.forward(inputs.iter().map(Vec::as_slice), &init);
        let backward = self.backward.forward(inputs.iter().rev().map(Vec::as_slice), &init);
        let n = inputs.len();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut f = Vec::with_capacity(2 * h);
                f.extend_from_slice(forward.hidden(t));
                f.extend_from_slice(backward.hidden(n - 1 - t));
                f
            })
            .collect();
        let emissions = features.iter().map(|f| self.projection.forward(f)).collect();
        (
            emissions,
            EmissionTrace {
                embed,
                features,
                forward,
                backward,
            },
        )
    }

    /// `T × K` emission scores.
    pub fn emission_scores(&self, sentence: &Sentence) -> Result<Vec<Vec<f64>>, TaggerError> {
        let statics = self.embedder.static_features(sentence)?;
        Ok(self.emissions_with(sentence, &statics).0)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the emissions is `d_emissions`.
    pub fn emissions_backward(&self, trace: &EmissionTrace, d_emissions: &[Vec<f64>], grads: &mut NerModel) {
        let h = self.lstm_hidden();
        let n = d_emissions.len();
        let mut dh_f = Vec::with_capacity(n);
        let mut dh_b = vec![Vec::new(); n];
        for (t, (f, de)) in trace.features.iter().zip(d_emissions).enumerate() {
            let mut df = vec![0.0; 2 * h];
            self.projection.backward(f, de, &mut grads.projection, Some(&mut df));
            dh_b[n - 1 - t] = df.split_off(h);
            dh_f.push(df);
        }
        let dx_f = self.forward.backward(&trace.forward, &dh_f, &mut grads.forward);
        let dx_b = self.backward.backward(&trace.backward, &dh_b, &mut grads.backward);
        let d_inputs: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut d = dx_f[t].clone();
                nn::axpy(1.0, &dx_b[n - 1 - t], &mut d);
                d
            })
            .collect();
        self.embedder.backward(&trace.embed, &d_inputs, &mut grads.embedder);
    }

    /// Tag indices of the sentence's gold IOBES tags.
    pub fn gold_indices(&self, sentence: &Sentence) -> Result<Option<Vec<usize>>, TaggerError> {
        let Some(tags) = sentence.gold_tags() else {
            return Ok(None);
        };
        tags.iter()
            .map(|t| self.tagset.index_of(t).ok_or_else(|| TaggerError::UnknownTag(t.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// CRF negative log-likelihood of `gold`; gradients are added to `grads`.
    pub fn loss_and_grad(
        &self,
        sentence: &Sentence,
        statics: &StaticFeatures,
        gold: &[usize],
        grads: &mut NerModel,
    ) -> Result<f64, TaggerError> {
        let (emissions, trace) = self.emissions_with(sentence, statics);
        let (loss, d_emissions) = self.crf.nll_with_grad(&emissions, gold, &mut grads.crf)?;
        self.emissions_backward(&trace, &d_emissions, grads);
        Ok(loss)
    }

    pub fn loss(&self, sentence: &Sentence, statics: &StaticFeatures, gold: &[usize]) -> Result<f64, TaggerError> {
        let (emissions, _) = self.emissions_with(sentence, statics);
        self.crf.nll(&emissions, gold)
    }

    /// Viterbi tags for one sentence.
    pub fn decode(&self, sentence: &Sentence) -> Result<Vec<String>, TaggerError> {
        let statics = self.embedder.static_features(sentence)?;
        Ok(self.decode_with(sentence, &statics))
    }

    pub fn decode_with(&self, sentence: &Sentence, statics: &StaticFeatures) -> Vec<String> {
        let (emissions, _) = self.emissions_with(sentence, statics);
        let (path, _) = self.crf.viterbi(&emissions);
        path.iter().map(|&y| self.tagset.tag(y).to_string()).collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, c) in self.embedder.components().iter().enumerate() {
            if c.is_trainable() {
                for part in ["embedding", "forward.w_ih", "forward.w_hh", "forward.bias"] {
                    names.push(format!("embed.{i}.{part}"));
                }
                for part in ["w_ih", "w_hh", "bias"] {
                    names.push(format!("embed.{i}.backward.{part}"));
                }
            }
        }
        for dir in ["forward", "backward"] {
            for part in ["w_ih", "w_hh", "bias"] {
                names.push(format!("encoder.{dir}.{part}"));
            }
        }
        names.extend(["projection.weight", "projection.bias", "crf.transitions"].map(String::from));
        names
    }

    /// Writes the model. Files the embedder was loaded from are recorded by
    /// path relative to `base_dir` plus their SHA-256.
    pub fn write_to<W: Write>(&self, w: W, base_dir: &Path) -> Result<(), TaggerError> {
        let components = self
            .embedder
            .components()
            .iter()
            .enumerate()
            .map(|(i, c)| ComponentHeader::describe(i, c, base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        let header = NerHeader {
            tags: self.tagset.tags().to_vec(),
            lstm_hidden: self.lstm_hidden(),
            components,
        };
        let json = serde_json::to_string(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        let names = self.tensor_names();
        let mut cw = ContainerWriter::new(w, MODEL_KIND, &json, names.len())?;
        for (name, t) in names.iter().zip(self.tensors()) {
            cw.tensor(name, t)?;
        }
        cw.finish()?;
        Ok(())
    }

    /// Reads a model, loading and hash-checking referenced files relative to
    /// `base_dir`.
    pub fn read_from<R: Read>(r: R, base_dir: &Path) -> Result<Self, TaggerError> {
        let mut cr = ContainerReader::open(r, MODEL_KIND)?;
        let header: NerHeader = serde_json::from_str(cr.header()).map_err(|e| FormatError::Header(e.to_string()))?;
        let components = header
            .components
            .into_iter()
            .map(|c| c.restore(base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        let embedder = StackedEmbedder::new(components)?;
        let mut model = NerModel::zeros(TagSet::from_tags(header.tags), embedder, header.lstm_hidden);
        for (name, t) in model.tensor_names().iter().zip(model.tensors_mut()) {
            cr.tensor_into(name, t)?;
        }
        cr.finish()?;
        model.crf.repin();
        Ok(model)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), TaggerError> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, parent_dir(path))?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, TaggerError> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path)?), parent_dir(path))
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

impl Parameters for NerModel {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = self.embedder.tensors();
        v.extend(self.forward.tensors());
        v.extend(self.backward.tensors());
        v.extend(self.projection.tensors());
        v.extend(self.crf.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.embedder.tensors_mut();
        v.extend(self.forward.tensors_mut());
        v.extend(self.backward.tensors_mut());
        v.extend(self.projection.tensors_mut());
        v.extend(self.crf.tensors_mut());
        v
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NerHeader {
    tags: Vec<String>,
    lstm_hidden: usize,
    components: Vec<ComponentHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ComponentHeader {
    Word {
        file: FileRef,
        dim: usize,
    },
    Char {
        embed_dim: usize,
        hidden: usize,
        vocabulary: Vec<u32>,
    },
    Contextual {
        forward: FileRef,
        backward: FileRef,
    },
}

fn relative(file: &FileRef, base_dir: &Path) -> Result<FileRef, TaggerError> {
    let target = file.path.canonicalize()?;
    let base = base_dir.canonicalize()?;
    let path = pathdiff::diff_paths(&target, &base).unwrap_or(target);
    Ok(FileRef {
        path,
        sha256: file.sha256.clone(),
    })
}

fn resolve(file: FileRef, base_dir: &Path) -> Result<FileRef, TaggerError> {
    let resolved = FileRef {
        path: base_dir.join(&file.path),
        sha256: file.sha256,
    };
    resolved.verify()?;
    Ok(resolved)
}

impl ComponentHeader {
    fn describe(index: usize, c: &EmbeddingComponent, base_dir: &Path) -> Result<Self, TaggerError> {
        Ok(match c {
            EmbeddingComponent::Word { table, source } => ComponentHeader::Word {
                file: relative(source.as_ref().ok_or(EmbedError::NoSource(index))?, base_dir)?,
                dim: table.dim(),
            },
            EmbeddingComponent::CharFeatures(e) => ComponentHeader::Char {
                embed_dim: e.embed_dim(),
                hidden: e.hidden_size(),
                vocabulary: e.vocab().code_points(),
            },
            EmbeddingComponent::Contextual { sources, .. } => {
                let (f, b) = sources.as_ref().ok_or(EmbedError::NoSource(index))?;
                ComponentHeader::Contextual {
                    forward: relative(f, base_dir)?,
                    backward: relative(b, base_dir)?,
                }
            }
        })
    }

    fn restore(self, base_dir: &Path) -> Result<EmbeddingComponent, TaggerError> {
        Ok(match self {
            ComponentHeader::Word { file, dim } => {
                let file = resolve(file, base_dir)?;
                let table = load_vectors(&file.path)?;
                if table.dim() != dim {
                    return Err(TaggerError::Model(format!(
                        "{} has dimension {}, model expects {dim}",
                        file.path.display(),
                        table.dim()
                    )));
                }
                EmbeddingComponent::Word {
                    table: Arc::new(table),
                    source: Some(file),
                }
            }
            ComponentHeader::Char {
                embed_dim,
                hidden,
                vocabulary,
            } => {
                let chars = vocabulary
                    .iter()
                    .map(|&cp| char::from_u32(cp).ok_or_else(|| TaggerError::Model(format!("invalid code point {cp}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                EmbeddingComponent::CharFeatures(CharFeatureEncoder::zeros(CharVocabulary::exact(chars), embed_dim, hidden))
            }
            ComponentHeader::Contextual { forward, backward } => {
                let forward = resolve(forward, base_dir)?;
                let backward = resolve(backward, base_dir)?;
                let embedder = ContextualEmbedder::new(
                    CharLm::load(&forward.path).map_err(EmbedError::from)?,
                    CharLm::load(&backward.path).map_err(EmbedError::from)?,
                )?;
                EmbeddingComponent::Contextual {
                    embedder: Arc::new(embedder),
                    sources: Some((forward, backward)),
                }
            }
        })
    }
}

/// Tags every sentence with Viterbi decoding. The result is in IOBES, with
/// gold tags (if any) converted accordingly.
pub fn predict(model: &NerModel, corpus: &TaggedCorpus) -> Result<TaggedCorpus, TaggerError> {
    let mut out = convert_scheme(corpus, TagScheme::Iobes)?;
    for sentence in out.sentences.iter_mut() {
        let tags = model.decode(sentence)?;
        for (tok, tag) in sentence.tokens_mut().iter_mut().zip(tags) {
            tok.predicted_tag = Some(tag);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charlm::Direction;
    use crate::corpus::{validate_tags, Token};
    use crate::embed::WordEmbeddingTable;
    use crate::testutil::{central_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sentence(words: &[&str]) -> Sentence {
        Sentence::new(words.iter().map(|w| Token::new(*w).unwrap()).collect()).unwrap()
    }

    fn words() -> WordEmbeddingTable {
        let mut t = WordEmbeddingTable::new(3);
        t.insert("Wien", vec![0.5, -0.2, 0.1]);
        t.insert("in", vec![0.0, 0.3, -0.4]);
        t
    }

    fn small_model(seed: u64) -> NerModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedder = StackedEmbedder::new(vec![
            EmbeddingComponent::word(words()),
            EmbeddingComponent::CharFeatures(CharFeatureEncoder::new(
                CharVocabulary::from_text("Wienabc"),
                3,
                2,
                &mut rng,
            )),
        ])
        .unwrap();
        NerModel::new(TagSet::from_labels(["LOC"]), embedder, 4, &mut rng)
    }

    #[test]
    fn emission_shape() {
        let m = small_model(1);
        let e = m.emission_scores(&sentence(&["in", "Wien", "ab"])).unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.iter().all(|r| r.len() == 5));
        assert_eq!(e, m.emission_scores(&sentence(&["in", "Wien", "ab"])).unwrap());
    }

    #[test]
    fn zero_weights_give_zero_emissions() {
        let m = small_model(1);
        let z = NerModel::zeros(m.tagset().clone(), m.embedder.clone(), 4);
        let e = z.emission_scores(&sentence(&["in", "Wien"])).unwrap();
        assert!(e.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn emission_gradient_through_encoder_and_projection() {
        let m = small_model(6);
        let s = sentence(&["in", "Wien", "cab"]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let statics = m.embedder.static_features(&s).unwrap();
        let (_, trace) = m.emissions_with(&s, &statics);
        let mut grads = nn::zeros_like(&m);
        m.emissions_backward(&trace, &w, &mut grads);
        let numeric = central_difference(&m.flatten(), 1e-5, |p| {
            let mut q = m.clone();
            q.assign_flat(p);
            let (e, _) = q.emissions_with(&s, &statics);
            e.iter().zip(&w).map(|(a, b)| nn::dot(a, b)).sum()
        });
        let analytic = grads.flatten();
        // the CRF sees no gradient from emissions alone
        let crf_len = m.crf.num_parameters();
        assert!(analytic[analytic.len() - crf_len..].iter().all(|&g| g == 0.0));
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn full_loss_gradient() {
        let m = small_model(8);
        let s = sentence(&["Wien", "in", "Wien"]);
        let gold = [4, 0, 4];
        let statics = m.embedder.static_features(&s).unwrap();
        let mut grads = nn::zeros_like(&m);
        m.loss_and_grad(&s, &statics, &gold, &mut grads).unwrap();
        let numeric = central_difference(&m.flatten(), 1e-5, |p| {
            let mut q = m.clone();
            q.assign_flat(p);
            q.loss(&s, &statics, &gold).unwrap()
        });
        assert!(max_relative_error(&grads.flatten(), &numeric) < 1e-4);
    }

    #[test]
    fn predictions_are_well_formed_and_repeatable() {
        let m = small_model(3);
        let corpus = TaggedCorpus::new(
            vec![sentence(&["in", "Wien", "ab", "c"]), sentence(&["Wien"])],
            TagScheme::Iob2,
            crate::corpus::Split::Test,
        )
        .unwrap();
        let a = predict(&m, &corpus).unwrap();
        assert_eq!(a, predict(&m, &corpus).unwrap());
        assert_eq!(a.scheme, TagScheme::Iobes);
        for s in &a.sentences {
            validate_tags(&s.predicted_tags().unwrap(), TagScheme::Iobes).unwrap();
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vec_path = dir.path().join("vectors.txt");
        std::fs::write(&vec_path, "Wien 0.5 -0.2 0.1\nin 0 0.3 -0.4\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vocab = CharVocabulary::from_text("Wien");
        let f = CharLm::new(vocab.clone(), Direction::Forward, 3, 4, &mut rng);
        let b = CharLm::new(vocab.clone(), Direction::Backward, 3, 2, &mut rng);
        let lm_dir = dir.path().join("lm");
        std::fs::create_dir(&lm_dir).unwrap();
        f.save(lm_dir.join("f.bin")).unwrap();
        b.save(lm_dir.join("b.bin")).unwrap();
        let specs = vec![
            crate::embed::ComponentSpec::Word { path: vec_path.clone() },
            crate::embed::ComponentSpec::Char { embed_dim: 3, hidden: 2 },
            crate::embed::ComponentSpec::Contextual {
                forward: lm_dir.join("f.bin"),
                backward: lm_dir.join("b.bin"),
            },
        ];
        let embedder = StackedEmbedder::from_specs(&specs, &vocab, &mut rng).unwrap();
        let m = NerModel::new(TagSet::from_labels(["LOC", "PER"]), embedder, 3, &mut rng);
        let out = dir.path().join("run").join("model.bin");
        std::fs::create_dir(out.parent().unwrap()).unwrap();
        m.save(&out).unwrap();
        let first = std::fs::read(&out).unwrap();
        let loaded = NerModel::load(&out).unwrap();
        loaded.save(&out).unwrap();
        assert_eq!(first, std::fs::read(&out).unwrap());
        let s = sentence(&["in", "Wien"]);
        assert_eq!(loaded.decode(&s).unwrap(), NerModel::load(&out).unwrap().decode(&s).unwrap());
        let header = String::from_utf8_lossy(&first);
        assert!(header.contains("../lm/f.bin"));

        std::fs::write(&vec_path, "Wien 0.5 -0.2 0.2\nin 0 0.3 -0.4\n").unwrap();
        assert!(matches!(
            NerModel::load(&out),
            Err(TaggerError::Embed(EmbedError::HashMismatch { .. }))
        ));
    }

    #[test]
    fn in_memory_components_cannot_be_saved() {
        let m = small_model(1);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            m.save(dir.path().join("m.bin")),
            Err(TaggerError::Embed(EmbedError::NoSource(0)))
        ));
    }
}
