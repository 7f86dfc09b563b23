use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::CorpusError;

/// Size of the read buffer wrapped around the underlying reader.
pub const READ_BUFFER_BYTES: usize = 64 * 1024;
/// Default upper bound on a single line.
pub const DEFAULT_MAX_LINE_BYTES: usize = 1 << 20;

/// Streaming line reader over a UTF-8 plain-text corpus.
///
/// Lines are yielded without their `\n` / `\r\n` terminator. Memory use is
/// bounded by the read buffer plus `max_line_bytes`; a longer line is an error
/// rather than an unbounded allocation.
pub struct PlainReader<R> {
    inner: BufReader<R>,
    line: Vec<u8>,
    offset: u64,
    max_line_bytes: usize,
    peak_line_capacity: usize,
    done: bool,
}

pub fn read_plain<P: AsRef<Path>>(path: P) -> Result<PlainReader<File>, CorpusError> {
    Ok(PlainReader::new(File::open(path)?))
}

impl<R: Read> PlainReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_limits(inner, READ_BUFFER_BYTES, DEFAULT_MAX_LINE_BYTES)
    }

    pub fn with_limits(inner: R, read_buffer: usize, max_line_bytes: usize) -> Self {
        PlainReader {
            inner: BufReader::with_capacity(read_buffer, inner),
            line: Vec::new(),
            offset: 0,
            max_line_bytes,
            peak_line_capacity: 0,
            done: false,
        }
    }

    /// Largest line buffer allocation seen so far, in bytes.
    pub fn peak_line_capacity(&self) -> usize {
        self.peak_line_capacity
    }

    /// Upper bound on the reader's own heap use.
    pub fn memory_bound(&self) -> usize {
        self.inner.capacity() + self.max_line_bytes
    }

    pub fn read_buffer_capacity(&self) -> usize {
        self.inner.capacity()
    }

    fn grow_to(&mut self, needed: usize) {
        if needed > self.line.capacity() {
            let target = needed
                .max(self.line.capacity() * 2)
                .min(self.max_line_bytes);
            self.line.reserve_exact(target - self.line.len());
            self.peak_line_capacity = self.peak_line_capacity.max(self.line.capacity());
        }
    }

    fn next_line(&mut self) -> Result<Option<String>, CorpusError> {
        self.line.clear();
        let start = self.offset;
        let mut saw_bytes = false;
        loop {
            let available = self.inner.fill_buf()?;
            if available.is_empty() {
                if !saw_bytes {
                    return Ok(None);
                }
                break;
            }
            saw_bytes = true;
            let (take, consumed, newline) = match available.iter().position(|&b| b == b'\n') {
                Some(pos) => (pos, pos + 1, true),
                None => (available.len(), available.len(), false),
            };
            let needed = self.line.len() + take;
            if needed > self.max_line_bytes {
                return Err(CorpusError::LineTooLong {
                    offset: start,
                    limit: self.max_line_bytes,
                });
            }
            self.grow_to(needed);
            let available = self.inner.fill_buf()?;
            self.line.extend_from_slice(&available[..take]);
            self.inner.consume(consumed);
            self.offset += consumed as u64;
            if newline {
                break;
            }
        }
        if self.line.last() == Some(&b'\r') {
            self.line.pop();
        }
        match std::str::from_utf8(&self.line) {
            Ok(s) => Ok(Some(s.to_string())),
            Err(e) => Err(CorpusError::Decode {
                offset: start + e.valid_up_to() as u64,
            }),
        }
    }
}

impl<R: Read> Iterator for PlainReader<R> {
    type Item = Result<String, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_line() {
            Ok(Some(line)) => Some(Ok(line)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(input: &[u8]) -> Vec<String> {
        PlainReader::new(input).collect::<Result<_, _>>().unwrap()
    }

    #[test]
    fn three_lines() {
        assert_eq!(lines(b"a\nb\r\nc"), ["a", "b", "c"]);
        assert_eq!(lines(b"a\n\nc\n"), ["a", "", "c"]);
    }

    #[test]
    fn empty_input() {
        assert!(lines(b"").is_empty());
    }

    #[test]
    fn decode_error_reports_byte_offset() {
        let input = b"ok\nab\xffcd\n";
        let results: Vec<_> = PlainReader::new(&input[..]).collect();
        assert_eq!(results.len(), 2);
        match &results[1] {
            Err(CorpusError::Decode { offset }) => assert_eq!(*offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlong_line_is_rejected() {
        let input = vec![b'x'; 100];
        let mut r = PlainReader::with_limits(&input[..], 16, 50);
        assert!(matches!(
            r.next(),
            Some(Err(CorpusError::LineTooLong { limit: 50, .. }))
        ));
        assert!(r.next().is_none());
    }

    /// Produces `total` bytes of 80-column text without materializing them.
    struct Synthetic {
        remaining: u64,
        col: usize,
    }

    impl Read for Synthetic {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            let n = (buf.len() as u64).min(self.remaining) as usize;
            for b in &mut buf[..n] {
                self.col += 1;
                *b = if self.col == 80 {
                    self.col = 0;
                    b'\n'
                } else {
                    b'a' + (self.col % 26) as u8
                };
            }
            self.remaining -= n as u64;
            Ok(n)
        }
    }

    #[test]
    fn hundred_megabytes_stay_within_buffer_bound() {
        let total = 100 * 1024 * 1024;
        let mut reader = PlainReader::with_limits(
            Synthetic {
                remaining: total,
                col: 0,
            },
            READ_BUFFER_BYTES,
            4096,
        );
        let mut count = 0u64;
        let mut bytes = 0u64;
        for line in reader.by_ref() {
            let line = line.unwrap();
            bytes += line.len() as u64 + 1;
            count += 1;
        }
        assert_eq!(bytes, total);
        assert_eq!(count, total / 80);
        assert!(reader.peak_line_capacity() <= 4096);
        assert_eq!(reader.read_buffer_capacity(), READ_BUFFER_BYTES);
        assert!(reader.peak_line_capacity() + reader.read_buffer_capacity() <= reader.memory_bound());
    }
}
