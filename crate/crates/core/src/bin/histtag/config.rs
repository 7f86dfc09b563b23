use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use histtag::charlm::{CharLmConfig, Direction};
use histtag::corpus::ConllColumns;
use histtag::embed::{ComponentSpec, DEFAULT_CHAR_EMBED_DIM, DEFAULT_CHAR_HIDDEN};
use histtag::tagger::TaggerConfig;
use histtag::TagScheme;

use crate::UsageError;

/// Run configuration. Relative paths are resolved against the directory of
/// the configuration file; outputs go below `output_dir`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub vocab: VocabSection,
    pub smlm: Option<SmlmSection>,
    pub lm: Option<LmSection>,
    #[serde(default)]
    pub embeddings: EmbeddingsSection,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub path: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Clean plain-text corpus, one sentence per line.
    pub plain: Option<PathBuf>,
    pub token_column: usize,
    pub tag_column: usize,
    pub scheme: TagScheme,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            dev: None,
            test: None,
            plain: None,
            token_column: 0,
            tag_column: 1,
            scheme: TagScheme::Iob2,
        }
    }
}

impl DataSection {
    pub fn columns(&self) -> ConllColumns {
        ConllColumns::new(self.token_column, self.tag_column)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    /// CoNLL files; defaults to the train, dev and test splits.
    pub sources: Option<Vec<PathBuf>>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmlmSection {
    pub p_keep: f64,
    pub seed: u64,
    pub mask_char: Option<char>,
    /// Defaults to `data.plain`.
    pub input: Option<PathBuf>,
}

impl Default for SmlmSection {
    fn default() -> Self {
        SmlmSection {
            p_keep: 0.9,
            seed: 0,
            mask_char: None,
            input: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub seed: u64,
    /// Training text; defaults to the corrupted corpus when `[smlm]` is
    /// present, `data.plain` otherwise.
    pub input: Option<PathBuf>,
    pub forward: CharLmConfig,
    pub backward: CharLmConfig,
}

impl LmSection {
    pub fn config(&self, direction: Direction) -> CharLmConfig {
        let mut c = match direction {
            Direction::Forward => self.forward.clone(),
            Direction::Backward => self.backward.clone(),
        };
        c.direction = direction;
        c
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingsSection {
    pub components: Vec<ComponentEntry>,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        EmbeddingsSection {
            components: vec![ComponentEntry::Char {
                embed_dim: DEFAULT_CHAR_EMBED_DIM,
                hidden: DEFAULT_CHAR_HIDDEN,
            }],
        }
    }
}

/// Like [`ComponentSpec`], but language-model paths may be left out to use
/// the models this configuration trains.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComponentEntry {
    Word {
        path: PathBuf,
    },
    Char {
        #[serde(default = "default_char_embed")]
        embed_dim: usize,
        #[serde(default = "default_char_hidden")]
        hidden: usize,
    },
    Contextual {
        forward: Option<PathBuf>,
        backward: Option<PathBuf>,
    },
}

fn default_char_embed() -> usize {
    DEFAULT_CHAR_EMBED_DIM
}

fn default_char_hidden() -> usize {
    DEFAULT_CHAR_HIDDEN
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub runs: usize,
    /// Below `output_dir`.
    pub output_dir: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            runs: 3,
            output_dir: PathBuf::from("ner"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        cfg.path = path.to_path_buf();
        cfg.base_dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        cfg.output_dir = cfg.base_dir.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let usage = |m: String| anyhow::Error::new(UsageError(m));
        self.tagger.validate().map_err(|e| usage(e.to_string()))?;
        if let Some(lm) = &self.lm {
            for d in [Direction::Forward, Direction::Backward] {
                lm.config(d).validate().map_err(|e| usage(format!("[lm.{d}] {e}")))?;
            }
        }
        if let Some(s) = &self.smlm {
            if !(0.0..=1.0).contains(&s.p_keep) {
                return Err(usage(format!("[smlm] p_keep {} is not a probability", s.p_keep)));
            }
        }
        if self.eval.runs == 0 {
            return Err(usage("[eval] runs must be at least 1".into()));
        }
        if self.embeddings.components.is_empty() {
            return Err(usage("[embeddings] needs at least one component".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn data_path(&self, which: &str) -> anyhow::Result<PathBuf> {
        let p = match which {
            "train" => &self.data.train,
            "dev" => &self.data.dev,
            "test" => &self.data.test,
            "plain" => &self.data.plain,
            _ => unreachable!(),
        };
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| UsageError(format!("config has no data.{which}")).into())
    }

    pub fn vocab_sources(&self) -> Vec<PathBuf> {
        match &self.vocab.sources {
            Some(s) => s.iter().map(|p| self.resolve(p)).collect(),
            None => [&self.data.train, &self.data.dev, &self.data.test]
                .into_iter()
                .flatten()
                .map(|p| self.resolve(p))
                .collect(),
        }
    }

    pub fn vocab_output(&self) -> PathBuf {
        self.vocab
            .output
            .as_ref()
            .map_or_else(|| self.output_dir.join("vocab.txt"), |p| self.resolve(p))
    }

    pub fn smlm_output(&self) -> PathBuf {
        self.output_dir.join("smlm.txt")
    }

    pub fn smlm_stats(&self) -> PathBuf {
        self.output_dir.join("smlm_stats.json")
    }

    pub fn smlm_input(&self) -> anyhow::Result<PathBuf> {
        match self.smlm.as_ref().and_then(|s| s.input.as_ref()) {
            Some(p) => Ok(self.resolve(p)),
            None => self.data_path("plain"),
        }
    }

    pub fn lm_input(&self) -> anyhow::Result<PathBuf> {
        match self.lm.as_ref().and_then(|l| l.input.as_ref()) {
            Some(p) => Ok(self.resolve(p)),
            None if self.smlm.is_some() => Ok(self.smlm_output()),
            None => self.data_path("plain"),
        }
    }

    pub fn lm_output(&self, d: Direction) -> PathBuf {
        self.output_dir.join("lm").join(format!("{d}.bin"))
    }

    pub fn ner_dir(&self) -> PathBuf {
        self.output_dir.join(&self.eval.output_dir)
    }

    pub fn component_specs(&self) -> Vec<ComponentSpec> {
        self.embeddings
            .components
            .iter()
            .map(|c| match c {
                ComponentEntry::Word { path } => ComponentSpec::Word {
                    path: self.resolve(path),
                },
                ComponentEntry::Char { embed_dim, hidden } => ComponentSpec::Char {
                    embed_dim: *embed_dim,
                    hidden: *hidden,
                },
                ComponentEntry::Contextual { forward, backward } => ComponentSpec::Contextual {
                    forward: forward
                        .as_ref()
                        .map_or_else(|| self.lm_output(Direction::Forward), |p| self.resolve(p)),
                    backward: backward
                        .as_ref()
                        .map_or_else(|| self.lm_output(Direction::Backward), |p| self.resolve(p)),
                },
            })
            .collect()
    }
}

pub fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", p.display())).into())
    }
}

pub fn read_text(p: &Path) -> anyhow::Result<String> {
    let mut text = String::new();
    for line in histtag::corpus::read_plain(p).with_context(|| format!("reading {}", p.display()))? {
        text.push_str(&line.with_context(|| format!("reading {}", p.display()))?);
        text.push('\n');
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(s)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("[data]\ntrain = \"t.conll\"\n").unwrap();
        assert_eq!(c.eval.runs, 3);
        assert_eq!(c.tagger.lstm_hidden, 512);
        assert!(matches!(c.embeddings.components[..], [ComponentEntry::Char { embed_dim: 25, hidden: 25 }]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("[data]\ntrian = \"t\"\n").is_err());
        assert!(parse("[tagger]\nlearning_rte = 0.1\n").is_err());
        assert!(parse("[lm.forward]\nhidden = 3\n").is_err());
        assert!(parse("colour = 1\n").is_err());
    }

    #[test]
    fn contextual_paths_default_to_trained_models() {
        let mut c = parse("[[embeddings.components]]\nkind = \"contextual\"\n").unwrap();
        c.base_dir = PathBuf::from("/x");
        c.output_dir = PathBuf::from("/x/out");
        match &c.component_specs()[0] {
            ComponentSpec::Contextual { forward, backward } => {
                assert_eq!(forward, &PathBuf::from("/x/out/lm/forward.bin"));
                assert_eq!(backward, &PathBuf::from("/x/out/lm/backward.bin"));
            }
            other => panic!("{other:?}"),
        }
    }
}
