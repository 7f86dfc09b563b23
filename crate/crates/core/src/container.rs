//! Binary model container shared by language models and taggers.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic          4 bytes   "HTGM"
//! version        u32       FORMAT_VERSION
//! kind           u8 length + UTF-8 bytes        e.g. "charlm", "ner"
//! header         u32 length + UTF-8 JSON        model-specific metadata
//! tensor count   u32
//! per tensor:
//!   name         u16 length + UTF-8 bytes
//!   rows, cols   u32, u32
//!   payload      rows * cols f32, row-major
//! ```
//!
//! Nothing may follow the last tensor. Parameters live in memory as `f64` and
//! are rounded to `f32` on write, so `save → load → save` is byte-identical.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Matrix;

pub const MAGIC: &[u8; 4] = b"HTGM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("file ends before the declared content")]
    Truncated,
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("expected a {expected:?} model, found {found:?}")]
    Kind { expected: String, found: String },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("tensor {name:?}: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    Shape {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("expected tensor {expected:?}, found {found:?}")]
    TensorName { expected: String, found: String },
    #[error("trailing bytes after the last tensor")]
    TrailingData,
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated
        } else {
            FormatError::Io(e)
        }
    }
}

pub struct ContainerWriter<W: Write> {
    w: W,
    remaining: u32,
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut w: W, kind: &str, header_json: &str, tensor_count: usize) -> io::Result<Self> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[kind.len() as u8])?;
        w.write_all(kind.as_bytes())?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(header_json.as_bytes())?;
        w.write_all(&(tensor_count as u32).to_le_bytes())?;
        Ok(ContainerWriter {
            w,
            remaining: tensor_count as u32,
        })
    }

    pub fn tensor(&mut self, name: &str, m: &Matrix) -> io::Result<()> {
        assert!(self.remaining > 0, "more tensors than declared");
        self.remaining -= 1;
        self.w.write_all(&(name.len() as u16).to_le_bytes())?;
        self.w.write_all(name.as_bytes())?;
        self.w.write_all(&(m.rows() as u32).to_le_bytes())?;
        self.w.write_all(&(m.cols() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(m.len() * 4);
        for &v in m.as_slice() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.w.write_all(&buf)
    }

    pub fn finish(mut self) -> io::Result<W> {
        assert_eq!(self.remaining, 0, "fewer tensors than declared");
        self.w.flush()?;
        Ok(self.w)
    }
}

pub struct ContainerReader<R: Read> {
    r: R,
    kind: String,
    header: String,
    remaining: u32,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, FormatError> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| FormatError::Header(e.to_string()))
}

impl<R: Read> ContainerReader<R> {
    pub fn open(mut r: R, expected_kind: &str) -> Result<Self, FormatError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut len = [0u8; 1];
        r.read_exact(&mut len)?;
        let kind = read_string(&mut r, len[0] as usize)?;
        if kind != expected_kind {
            return Err(FormatError::Kind {
                expected: expected_kind.to_string(),
                found: kind,
            });
        }
        let header_len = read_u32(&mut r)? as usize;
        let header = read_string(&mut r, header_len)?;
        let remaining = read_u32(&mut r)?;
        Ok(ContainerReader {
            r,
            kind,
            header,
            remaining,
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    /// Reads the next tensor, checking its name and shape.
    pub fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix, FormatError> {
        if self.remaining == 0 {
            return Err(FormatError::TensorName {
                expected: name.to_string(),
                found: String::new(),
            });
        }
        self.remaining -= 1;
        let mut nl = [0u8; 2];
        self.r.read_exact(&mut nl)?;
        let found = read_string(&mut self.r, u16::from_le_bytes(nl) as usize)?;
        if found != name {
            return Err(FormatError::TensorName {
                expected: name.to_string(),
                found,
            });
        }
        let r = read_u32(&mut self.r)? as usize;
        let c = read_u32(&mut self.r)? as usize;
        if (r, c) != (rows, cols) {
            return Err(FormatError::Shape {
                name: name.to_string(),
                expected_rows: rows,
                expected_cols: cols,
                rows: r,
                cols: c,
            });
        }
        let mut buf = vec![0u8; r * c * 4];
        self.r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Matrix::from_vec(r, c, data))
    }

    /// Reads into an existing matrix of the expected shape.
    pub fn tensor_into(&mut self, name: &str, target: &mut Matrix) -> Result<(), FormatError> {
        *target = self.tensor(name, target.rows(), target.cols())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), FormatError> {
        if self.remaining != 0 {
            return Err(FormatError::Header(format!(
                "{} declared tensors were not consumed",
                self.remaining
            )));
        }
        let mut extra = [0u8; 1];
        match self.r.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(FormatError::TrailingData),
        }
    }
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn file_sha256<P: AsRef<Path>>(path: P) -> io::Result<String> {
    let mut hasher = Sha256::new();
    io::copy(&mut File::open(path)?, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let m = Matrix::from_vec(2, 2, vec![1.0, -2.5, 0.125, 3.0]);
        let mut w = ContainerWriter::new(Vec::new(), "test", "{\"a\":1}", 1).unwrap();
        w.tensor("m", &m).unwrap();
        w.finish().unwrap()
    }

    #[test]
    fn round_trip() {
        let bytes = sample();
        let mut r = ContainerReader::open(bytes.as_slice(), "test").unwrap();
        assert_eq!(r.header(), "{\"a\":1}");
        let m = r.tensor("m", 2, 2).unwrap();
        assert_eq!(m.as_slice(), &[1.0, -2.5, 0.125, 3.0]);
        r.finish().unwrap();
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample();
        for cut in 0..bytes.len() {
            let result = ContainerReader::open(&bytes[..cut], "test").and_then(|mut r| {
                r.tensor("m", 2, 2)?;
                r.finish()
            });
            assert!(matches!(result, Err(FormatError::Truncated)), "cut at {cut}");
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = sample();
        assert!(matches!(
            ContainerReader::open(bytes.as_slice(), "ner"),
            Err(FormatError::Kind { .. })
        ));
        bytes[4] = 9;
        assert!(matches!(
            ContainerReader::open(bytes.as_slice(), "test"),
            Err(FormatError::Version { found: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            ContainerReader::open(bytes.as_slice(), "test"),
            Err(FormatError::BadMagic)
        ));
    }

    #[test]
    fn shape_and_trailing_checks() {
        let bytes = sample();
        let mut r = ContainerReader::open(bytes.as_slice(), "test").unwrap();
        assert!(matches!(r.tensor("m", 1, 4), Err(FormatError::Shape { .. })));
        let mut extra = sample();
        extra.push(0);
        let mut r = ContainerReader::open(extra.as_slice(), "test").unwrap();
        r.tensor("m", 2, 2).unwrap();
        assert!(matches!(r.finish(), Err(FormatError::TrailingData)));
    }
}
