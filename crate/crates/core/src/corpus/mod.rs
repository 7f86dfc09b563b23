//! Labeled and unlabeled text: CoNLL column files, tag schemes, spans,
//! character vocabularies and plain-text streams.

mod plain;
mod tags;
mod vocab;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plain::{read_plain, PlainReader, DEFAULT_MAX_LINE_BYTES, READ_BUFFER_BYTES};
pub use tags::{
    convert_tags, extract_spans, format_tag, parse_tag, render_tags, validate_tags, EntitySpan,
    Prefix, Tag, TagError, TagScheme,
};
pub use vocab::{extract_char_vocab, CharVocabulary, VocabBuilder};

/// Entity types of the historic German datasets; always present in
/// [`entity_counts`] output.
pub const STANDARD_LABELS: [&str; 4] = ["LOC", "MISC", "ORG", "PER"];

const DOCSTART: &str = "-DOCSTART-";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus contains no sentences")]
    Empty,
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: u64 },
    #[error("line starting at byte offset {offset} exceeds {limit} bytes")]
    LineTooLong { offset: u64, limit: usize },
    #[error("invalid token text {0:?}")]
    InvalidToken(String),
    #[error("a sentence needs at least one token")]
    EmptySentence,
    #[error("sentence {sentence}: {source}")]
    Tags {
        sentence: usize,
        #[source]
        source: TagError,
    },
    #[error("sentence {sentence}: token {token} has no {which} tag")]
    MissingTag {
        sentence: usize,
        token: usize,
        which: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub gold_tag: Option<String>,
    pub predicted_tag: Option<String>,
}

impl Token {
    /// Token text must be non-empty and free of whitespace and control
    /// characters, since both would break the column format.
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token {
            text,
            gold_tag: None,
            predicted_tag: None,
        })
    }

    pub fn with_gold(mut self, tag: impl Into<String>) -> Self {
        self.gold_tag = Some(tag.into());
        self
    }

    pub fn with_predicted(mut self, tag: impl Into<String>) -> Self {
        self.predicted_tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [Token] {
        &mut self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token texts joined by single spaces.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&t.text);
        }
        s
    }

    pub fn gold_tags(&self) -> Option<Vec<&str>> {
        self.tokens.iter().map(|t| t.gold_tag.as_deref()).collect()
    }

    pub fn predicted_tags(&self) -> Option<Vec<&str>> {
        self.tokens
            .iter()
            .map(|t| t.predicted_tag.as_deref())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// Sentences whose gold (and, when present, predicted) tags are well-formed
/// under `scheme`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCorpus {
    pub sentences: Vec<Sentence>,
    pub scheme: TagScheme,
    pub split: Split,
}

impl TaggedCorpus {
    pub fn new(
        sentences: Vec<Sentence>,
        scheme: TagScheme,
        split: Split,
    ) -> Result<Self, CorpusError> {
        for (i, s) in sentences.iter().enumerate() {
            check_sentence_tags(s, scheme).map_err(|source| CorpusError::Tags {
                sentence: i,
                source,
            })?;
        }
        Ok(TaggedCorpus {
            sentences,
            scheme,
            split,
        })
    }

    pub fn empty(scheme: TagScheme, split: Split) -> Self {
        TaggedCorpus {
            sentences: Vec::new(),
            scheme,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Gold spans of every sentence.
    pub fn gold_spans(&self) -> Result<Vec<Vec<EntitySpan>>, CorpusError> {
        self.sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let tags = s.gold_tags().ok_or(CorpusError::MissingTag {
                    sentence: i,
                    token: s.tokens.iter().position(|t| t.gold_tag.is_none()).unwrap_or(0),
                    which: "gold",
                })?;
                extract_spans(&tags, self.scheme).map_err(|source| CorpusError::Tags {
                    sentence: i,
                    source,
                })
            })
            .collect()
    }

    /// Entity labels occurring in gold tags.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .filter_map(|t| t.gold_tag.as_deref())
            .filter_map(|t| match parse_tag(t, self.scheme) {
                Ok(Tag::Entity { label, .. }) => Some(label.to_string()),
                _ => None,
            })
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

fn check_sentence_tags(s: &Sentence, scheme: TagScheme) -> Result<(), TagError> {
    for tags in [s.gold_tags(), s.predicted_tags()].into_iter().flatten() {
        validate_tags(&tags, scheme)?;
    }
    Ok(())
}

/// Rewrites gold and predicted tags into `target`, preserving every span.
pub fn convert_scheme(corpus: &TaggedCorpus, target: TagScheme) -> Result<TaggedCorpus, CorpusError> {
    let mut out = corpus.clone();
    out.scheme = target;
    if corpus.scheme == target {
        return Ok(out);
    }
    for (i, s) in out.sentences.iter_mut().enumerate() {
        let wrap = |source| CorpusError::Tags {
            sentence: i,
            source,
        };
        let gold = s
            .gold_tags()
            .map(|t| convert_tags(&t, corpus.scheme, target))
            .transpose()
            .map_err(wrap)?;
        let pred = s
            .predicted_tags()
            .map(|t| convert_tags(&t, corpus.scheme, target))
            .transpose()
            .map_err(wrap)?;
        for (k, tok) in s.tokens.iter_mut().enumerate() {
            if let Some(g) = &gold {
                tok.gold_tag = Some(g[k].clone());
            }
            if let Some(p) = &pred {
                tok.predicted_tag = Some(p[k].clone());
            }
        }
    }
    Ok(out)
}

/// Number of gold spans per label. [`STANDARD_LABELS`] are always present.
pub fn entity_counts(corpus: &TaggedCorpus) -> Result<BTreeMap<String, usize>, CorpusError> {
    let mut counts: BTreeMap<String, usize> =
        STANDARD_LABELS.iter().map(|l| (l.to_string(), 0)).collect();
    for spans in corpus.gold_spans()? {
        for span in spans {
            *counts.entry(span.label).or_default() += 1;
        }
    }
    Ok(counts)
}

/// Column layout of a CoNLL file. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConllColumns {
    pub token: usize,
    pub gold: Option<usize>,
    pub predicted: Option<usize>,
}

impl Default for ConllColumns {
    fn default() -> Self {
        ConllColumns {
            token: 0,
            gold: Some(1),
            predicted: None,
        }
    }
}

impl ConllColumns {
    pub fn new(token: usize, gold: usize) -> Self {
        ConllColumns {
            token,
            gold: Some(gold),
            predicted: None,
        }
    }

    pub fn with_predicted(mut self, column: usize) -> Self {
        self.predicted = Some(column);
        self
    }

    fn needed(&self) -> usize {
        [Some(self.token), self.gold, self.predicted]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0)
            + 1
    }
}

pub fn read_conll<P: AsRef<Path>>(
    path: P,
    columns: ConllColumns,
    scheme: TagScheme,
    split: Split,
) -> Result<TaggedCorpus, CorpusError> {
    parse_conll(BufReader::new(File::open(path)?), columns, scheme, split)
}

/// Parses whitespace-separated columns; a blank line ends a sentence and
/// `-DOCSTART-` lines are skipped.
pub fn parse_conll<R: BufRead>(
    reader: R,
    columns: ConllColumns,
    scheme: TagScheme,
    split: Split,
) -> Result<TaggedCorpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    let mut finish = |tokens: &mut Vec<Token>, lines: &mut Vec<usize>| -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = Sentence::new(std::mem::take(tokens))?;
        if let Err(e) = check_sentence_tags(&sentence, scheme) {
            let line = match &e {
                TagError::IllFormed { position, .. } => {
                    lines.get(*position).or(lines.last()).copied().unwrap_or(0)
                }
                _ => lines.last().copied().unwrap_or(0),
            };
            return Err(CorpusError::Parse {
                line,
                message: e.to_string(),
            });
        }
        lines.clear();
        sentences.push(sentence);
        Ok(())
    };

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            finish(&mut tokens, &mut lines)?;
            continue;
        }
        if fields[0].starts_with(DOCSTART) {
            continue;
        }
        if fields.len() < columns.needed() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!(
                    "expected at least {} columns, found {}",
                    columns.needed(),
                    fields.len()
                ),
            });
        }
        let mut token = Token::new(fields[columns.token]).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        for (col, slot) in [
            (columns.gold, &mut token.gold_tag),
            (columns.predicted, &mut token.predicted_tag),
        ] {
            if let Some(col) = col {
                let tag = fields[col];
                parse_tag(tag, scheme).map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
                *slot = Some(tag.to_string());
            }
        }
        tokens.push(token);
        lines.push(line_no);
    }
    finish(&mut tokens, &mut lines)?;
    if sentences.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(TaggedCorpus {
        sentences,
        scheme,
        split,
    })
}

/// Writes `token [gold] [predicted]` lines separated by single spaces, with a
/// blank line after every sentence.
pub fn write_conll<W: Write>(corpus: &TaggedCorpus, w: W) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    for s in &corpus.sentences {
        for t in s.tokens() {
            w.write_all(t.text.as_bytes())?;
            for tag in [&t.gold_tag, &t.predicted_tag].into_iter().flatten() {
                w.write_all(b" ")?;
                w.write_all(tag.as_bytes())?;
            }
            w.write_all(b"\n")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_conll_file<P: AsRef<Path>>(corpus: &TaggedCorpus, path: P) -> io::Result<()> {
    write_conll(corpus, File::create(path)?)
}
