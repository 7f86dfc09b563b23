use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use super::{CorpusError, TaggedCorpus};

/// Character inventory of a dataset, sorted by code point.
///
/// The space character is always present: rendered sentences join tokens with
/// it, so every model reading text needs an index for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocabulary {
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let mut set: BTreeSet<char> = chars.into_iter().collect();
        set.insert(' ');
        Self::from_sorted(set.into_iter().collect())
    }

    /// Builds a vocabulary holding exactly `chars` (no space injection).
    /// Used when restoring a saved model.
    pub fn exact<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        Self::from_sorted(set.into_iter().collect())
    }

    fn from_sorted(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharVocabulary { chars, index }
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_chars(text.chars())
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    pub fn union(&self, other: &CharVocabulary) -> CharVocabulary {
        CharVocabulary::exact(self.chars.iter().chain(&other.chars).copied())
    }

    /// Every character concatenated in index order.
    pub fn render(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn code_points(&self) -> Vec<u32> {
        self.chars.iter().map(|&c| c as u32).collect()
    }

    /// Writes the vocabulary as a count header followed by one hexadecimal
    /// code point per line; printable characters are echoed after a tab.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# characters: {}", self.len())?;
        for &c in &self.chars {
            if c.is_whitespace() || c.is_control() {
                writeln!(w, "{:04X}", c as u32)?;
            } else {
                writeln!(w, "{:04X}\t{}", c as u32, c)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut chars = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let hex = line.split('\t').next().unwrap_or_default();
            let c = u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| CorpusError::Parse {
                    line: n + 1,
                    message: format!("invalid code point {hex:?}"),
                })?;
            chars.push(c);
        }
        Ok(CharVocabulary::exact(chars))
    }
}

/// Accumulates characters from several sources.
#[derive(Debug, Default, Clone)]
pub struct VocabBuilder {
    chars: BTreeSet<char>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_text(&mut self, text: &str) -> &mut Self {
        self.chars.extend(text.chars());
        self
    }

    pub fn add_corpus(&mut self, corpus: &TaggedCorpus) -> &mut Self {
        for sentence in &corpus.sentences {
            for token in sentence.tokens() {
                self.chars.extend(token.text.chars());
            }
        }
        self
    }

    pub fn add_lines<I>(&mut self, lines: I) -> Result<&mut Self, CorpusError>
    where
        I: IntoIterator<Item = Result<String, CorpusError>>,
    {
        for line in lines {
            self.chars.extend(line?.chars());
        }
        Ok(self)
    }

    pub fn build(&self) -> CharVocabulary {
        CharVocabulary::from_chars(self.chars.iter().copied())
    }
}

/// Union of the token characters of every corpus, plus the space character.
pub fn extract_char_vocab(corpora: &[&TaggedCorpus]) -> CharVocabulary {
    let mut b = VocabBuilder::new();
    for c in corpora {
        b.add_corpus(c);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Split, TagScheme, Token};

    fn corpus(words: &[&str]) -> TaggedCorpus {
        let tokens = words.iter().map(|w| Token::new(*w).unwrap()).collect();
        TaggedCorpus::new(
            vec![Sentence::new(tokens).unwrap()],
            TagScheme::Iob2,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_includes_space_and_sorts() {
        let v = extract_char_vocab(&[&corpus(&["ab", "bc"])]);
        assert_eq!(v.chars(), &[' ', 'a', 'b', 'c']);
        assert_eq!(v.index_of('c'), Some(3));
        assert_eq!(v.index_of('z'), None);
    }

    #[test]
    fn union_of_sources() {
        let a = corpus(&["Wien"]);
        let b = corpus(&["Graz", "ſ"]);
        let both = extract_char_vocab(&[&a, &b]);
        let separate = extract_char_vocab(&[&a]).union(&extract_char_vocab(&[&b]));
        assert_eq!(both, separate);
    }

    #[test]
    fn extraction_is_idempotent() {
        let v = extract_char_vocab(&[&corpus(&["Müller", "k.k.", "Innsbruck", "ſ"])]);
        assert_eq!(CharVocabulary::from_text(&v.render()), v);
    }

    #[test]
    fn file_round_trip() {
        let v = CharVocabulary::from_text("Aäb\tſ¶");
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# characters: 7\n0009\n0020\n0041\tA\n"));
        let back = CharVocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn bad_code_point_is_a_parse_error() {
        let err = CharVocabulary::read_from("0041\nD800\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }
}
