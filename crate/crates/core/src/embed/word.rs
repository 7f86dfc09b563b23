use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::EmbedError;

/// Static word vectors loaded from the common text format: an optional
/// `count dim` header, then `word v1 … vdim` per line.
///
/// Lookup tries the exact form, then its lowercase form; anything else is the
/// zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        WordEmbeddingTable {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Option<Vec<f64>> {
        assert_eq!(vector.len(), self.dim, "vector dimension mismatch");
        self.entries.insert(word.into(), vector)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries
            .get(word)
            .or_else(|| self.entries.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    /// Vector for `word`, or zeros when it is out of vocabulary.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.get(word)
            .map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut table: Option<WordEmbeddingTable> = None;
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let dim = fields[1].parse::<usize>().unwrap();
                table = Some(WordEmbeddingTable::new(dim));
                continue;
            }
            let parse_err = |message: String| EmbedError::Parse {
                line: line_no,
                message,
            };
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            if values.is_empty() {
                return Err(parse_err(format!("word {:?} has no vector", fields[0])));
            }
            let table = table.get_or_insert_with(|| WordEmbeddingTable::new(values.len()));
            if values.len() != table.dim {
                return Err(parse_err(format!(
                    "expected {} components, found {}",
                    table.dim,
                    values.len()
                )));
            }
            if table.entries.insert(fields[0].to_string(), values).is_some() {
                log::warn!("line {line_no}: duplicate word {:?}, keeping the later vector", fields[0]);
            }
        }
        table.ok_or_else(|| EmbedError::Parse {
            line: 0,
            message: "no vectors found".into(),
        })
    }
}

pub fn load_vectors<P: AsRef<Path>>(path: P) -> Result<WordEmbeddingTable, EmbedError> {
    WordEmbeddingTable::parse(BufReader::new(File::open(path)?))
}
