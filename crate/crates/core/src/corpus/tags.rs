//! Tag schemes, span extraction and scheme conversion.
//!
//! A tag is either `O` or `<prefix>-<label>`. IOB2 allows the prefixes `B`
//! and `I`; IOBES adds `E` (end of a multi-token span) and `S` (single-token
//! span). Every operation here goes through [`EntitySpan`]s, so converting
//! between schemes is lossless by construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagScheme {
    Iob2,
    Iobes,
}

impl TagScheme {
    fn allows(self, prefix: Prefix) -> bool {
        match self {
            TagScheme::Iob2 => matches!(prefix, Prefix::B | Prefix::I),
            TagScheme::Iobes => true,
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagScheme::Iob2 => "iob2",
            TagScheme::Iobes => "iobes",
        })
    }
}

impl FromStr for TagScheme {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iob2" | "iob" | "bio" => Ok(TagScheme::Iob2),
            "iobes" | "bioes" => Ok(TagScheme::Iobes),
            _ => Err(TagError::UnknownScheme(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prefix {
    B,
    I,
    E,
    S,
}

impl Prefix {
    pub fn as_char(self) -> char {
        match self {
            Prefix::B => 'B',
            Prefix::I => 'I',
            Prefix::E => 'E',
            Prefix::S => 'S',
        }
    }
}

/// A parsed tag borrowing its label from the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Entity { prefix: Prefix, label: &'a str },
}

/// A labeled token range; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        EntitySpan {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unknown tag scheme {0:?}")]
    UnknownScheme(String),
    #[error("tag {tag:?} is not valid under {scheme}")]
    Malformed { tag: String, scheme: TagScheme },
    #[error("position {position}: {reason}")]
    IllFormed { position: usize, reason: String },
    #[error("span {span:?} is out of range, overlapping or unsorted")]
    BadSpan { span: EntitySpan },
}

pub fn parse_tag(tag: &str, scheme: TagScheme) -> Result<Tag<'_>, TagError> {
    let malformed = || TagError::Malformed {
        tag: tag.to_string(),
        scheme,
    };
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    let (head, label) = tag.split_once('-').ok_or_else(malformed)?;
    let prefix = match head {
        "B" => Prefix::B,
        "I" => Prefix::I,
        "E" => Prefix::E,
        "S" => Prefix::S,
        _ => return Err(malformed()),
    };
    if label.is_empty() || !scheme.allows(prefix) {
        return Err(malformed());
    }
    Ok(Tag::Entity { prefix, label })
}

pub fn format_tag(prefix: Prefix, label: &str) -> String {
    format!("{}-{}", prefix.as_char(), label)
}

/// Decodes a tag sequence into spans, rejecting sequences that are not
/// well-formed under `scheme`.
pub fn extract_spans<S: AsRef<str>>(
    tags: &[S],
    scheme: TagScheme,
) -> Result<Vec<EntitySpan>, TagError> {
    let ill = |position: usize, reason: String| TagError::IllFormed { position, reason };
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, raw) in tags.iter().enumerate() {
        let raw = raw.as_ref();
        match parse_tag(raw, scheme)? {
            Tag::Outside => {
                if let Some((label, start)) = open.take() {
                    if scheme == TagScheme::Iobes {
                        return Err(ill(i, format!("span {label} opened at {start} is not closed by E-")));
                    }
                    spans.push(EntitySpan::new(label, start, i - 1));
                }
            }
            Tag::Entity { prefix, label } => match prefix {
                Prefix::B | Prefix::S => {
                    if let Some((open_label, start)) = open.take() {
                        if scheme == TagScheme::Iobes {
                            return Err(ill(i, format!("{raw} inside open span {open_label}")));
                        }
                        spans.push(EntitySpan::new(open_label, start, i - 1));
                    }
                    if prefix == Prefix::B {
                        open = Some((label, i));
                    } else {
                        spans.push(EntitySpan::new(label, i, i));
                    }
                }
                Prefix::I | Prefix::E => match open {
                    Some((open_label, start)) if open_label == label => {
                        if prefix == Prefix::E {
                            spans.push(EntitySpan::new(label, start, i));
                            open = None;
                        }
                    }
                    _ => return Err(ill(i, format!("{raw} does not continue a {label} span"))),
                },
            },
        }
    }
    if let Some((label, start)) = open {
        if scheme == TagScheme::Iobes {
            return Err(ill(tags.len(), format!("span {label} opened at {start} is not closed")));
        }
        spans.push(EntitySpan::new(label, start, tags.len() - 1));
    }
    Ok(spans)
}

pub fn validate_tags<S: AsRef<str>>(tags: &[S], scheme: TagScheme) -> Result<(), TagError> {
    extract_spans(tags, scheme).map(|_| ())
}

/// Encodes sorted, non-overlapping spans as a tag sequence of length `len`.
pub fn render_tags(
    spans: &[EntitySpan],
    len: usize,
    scheme: TagScheme,
) -> Result<Vec<String>, TagError> {
    let mut tags = vec!["O".to_string(); len];
    let mut next_free = 0;
    for span in spans {
        if span.start < next_free || span.end < span.start || span.end >= len || span.label.is_empty()
        {
            return Err(TagError::BadSpan { span: span.clone() });
        }
        next_free = span.end + 1;
        let l = &span.label;
        match scheme {
            TagScheme::Iob2 => {
                tags[span.start] = format_tag(Prefix::B, l);
                for t in &mut tags[span.start + 1..=span.end] {
                    *t = format_tag(Prefix::I, l);
                }
            }
            TagScheme::Iobes if span.start == span.end => {
                tags[span.start] = format_tag(Prefix::S, l);
            }
            TagScheme::Iobes => {
                tags[span.start] = format_tag(Prefix::B, l);
                for t in &mut tags[span.start + 1..span.end] {
                    *t = format_tag(Prefix::I, l);
                }
                tags[span.end] = format_tag(Prefix::E, l);
            }
        }
    }
    Ok(tags)
}

pub fn convert_tags<S: AsRef<str>>(
    tags: &[S],
    from: TagScheme,
    to: TagScheme,
) -> Result<Vec<String>, TagError> {
    let spans = extract_spans(tags, from)?;
    render_tags(&spans, tags.len(), to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scan_spans;
    use proptest::prelude::*;

    #[test]
    fn iobes_to_iob2_rewrites() {
        let c = |t: &[&str]| convert_tags(t, TagScheme::Iobes, TagScheme::Iob2).unwrap();
        assert_eq!(c(&["B-LOC", "I-LOC", "E-LOC"]), ["B-LOC", "I-LOC", "I-LOC"]);
        assert_eq!(c(&["S-PER"]), ["B-PER"]);
        assert_eq!(c(&["O", "O"]), ["O", "O"]);
    }

    #[test]
    fn spans_from_iobes() {
        let spans = extract_spans(&["B-PER", "E-PER", "O"], TagScheme::Iobes).unwrap();
        assert_eq!(spans, vec![EntitySpan::new("PER", 0, 1)]);
        let spans = extract_spans(&["S-LOC", "S-LOC"], TagScheme::Iobes).unwrap();
        assert_eq!(
            spans,
            vec![EntitySpan::new("LOC", 0, 0), EntitySpan::new("LOC", 1, 1)]
        );
    }

    #[test]
    fn iob2_adjacent_spans_split_on_b() {
        let spans = extract_spans(&["B-ORG", "I-ORG", "B-ORG", "O", "B-PER"], TagScheme::Iob2).unwrap();
        assert_eq!(
            spans,
            vec![
                EntitySpan::new("ORG", 0, 1),
                EntitySpan::new("ORG", 2, 2),
                EntitySpan::new("PER", 4, 4)
            ]
        );
    }

    #[test]
    fn ill_formed_sequences_are_rejected() {
        for (tags, scheme) in [
            (vec!["I-LOC"], TagScheme::Iob2),
            (vec!["O", "I-LOC"], TagScheme::Iob2),
            (vec!["B-PER", "I-LOC"], TagScheme::Iob2),
            (vec!["B-PER"], TagScheme::Iobes),
            (vec!["B-PER", "O"], TagScheme::Iobes),
            (vec!["B-PER", "S-PER"], TagScheme::Iobes),
            (vec!["E-PER"], TagScheme::Iobes),
            (vec!["B-PER", "E-LOC"], TagScheme::Iobes),
        ] {
            assert!(
                matches!(extract_spans(&tags, scheme), Err(TagError::IllFormed { .. })),
                "{tags:?} should be rejected under {scheme}"
            );
        }
    }

    #[test]
    fn prefixes_outside_scheme_are_malformed() {
        assert!(matches!(
            parse_tag("S-PER", TagScheme::Iob2),
            Err(TagError::Malformed { .. })
        ));
        assert!(parse_tag("X-PER", TagScheme::Iobes).is_err());
        assert!(parse_tag("B-", TagScheme::Iobes).is_err());
        assert!(parse_tag("LOC", TagScheme::Iobes).is_err());
        assert_eq!(
            parse_tag("B-LOC-X", TagScheme::Iob2).unwrap(),
            Tag::Entity {
                prefix: Prefix::B,
                label: "LOC-X"
            }
        );
    }

    #[test]
    fn render_rejects_overlaps() {
        let spans = [EntitySpan::new("A", 0, 2), EntitySpan::new("A", 2, 3)];
        assert!(render_tags(&spans, 5, TagScheme::Iob2).is_err());
        assert!(render_tags(&[EntitySpan::new("A", 3, 5)], 5, TagScheme::Iob2).is_err());
    }

    pub(crate) fn span_layout() -> impl Strategy<Value = (usize, Vec<EntitySpan>)> {
        // (gap, length, label) triples laid out left to right
        prop::collection::vec((0usize..3, 1usize..4, 0usize..3), 0..8).prop_map(|parts| {
            let labels = ["LOC", "PER", "ORG"];
            let mut pos = 0;
            let mut spans = Vec::new();
            for (gap, len, l) in parts {
                pos += gap;
                spans.push(EntitySpan::new(labels[l], pos, pos + len - 1));
                pos += len;
            }
            (pos + 1, spans)
        })
    }

    proptest! {
        #[test]
        fn render_then_extract_is_identity((len, spans) in span_layout()) {
            for scheme in [TagScheme::Iob2, TagScheme::Iobes] {
                let tags = render_tags(&spans, len, scheme).unwrap();
                prop_assert_eq!(extract_spans(&tags, scheme).unwrap(), spans.clone());
            }
        }

        #[test]
        fn conversion_preserves_spans((len, spans) in span_layout()) {
            let iobes = render_tags(&spans, len, TagScheme::Iobes).unwrap();
            let iob2 = convert_tags(&iobes, TagScheme::Iobes, TagScheme::Iob2).unwrap();
            prop_assert_eq!(extract_spans(&iob2, TagScheme::Iob2).unwrap(), spans.clone());
            let back = convert_tags(&iob2, TagScheme::Iob2, TagScheme::Iobes).unwrap();
            prop_assert_eq!(back, iobes);
        }

        #[test]
        fn extraction_matches_two_pointer_scan((len, spans) in span_layout()) {
            for scheme in [TagScheme::Iob2, TagScheme::Iobes] {
                let tags = render_tags(&spans, len, scheme).unwrap();
                let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
                let expected: Vec<EntitySpan> = scan_spans(&refs)
                    .into_iter()
                    .map(|(l, s, e)| EntitySpan::new(l, s, e))
                    .collect();
                prop_assert_eq!(extract_spans(&tags, scheme).unwrap(), expected);
            }
        }
    }
}
