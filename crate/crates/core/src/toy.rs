//! Synthetic newspaper-style data for tests, examples and the bundled demo
//! pipeline.
//!
//! Sentences are filled from templates with person, location and
//! organization names. The tagged splits use historic spelling (long s,
//! `daß`), the plain corpus uses contemporary spelling, so the tagged data
//! contains characters the plain corpus never shows.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{format_tag, write_conll_file, Prefix, Sentence, Split, TagScheme, TaggedCorpus, Token};

pub const TRAIN_SENTENCES: usize = 50;
pub const DEV_SENTENCES: usize = 15;
pub const TEST_SENTENCES: usize = 15;
pub const PLAIN_LINES: usize = 600;
pub const VECTOR_DIM: usize = 16;

const PERSONS: &[&str] = &[
    "Franz Joseph",
    "Maria Huber",
    "Johann Strauß",
    "Karl Lueger",
    "Anna Sacher",
    "Ludwig Maier",
    "Josef Weber",
    "Theresia Gruber",
    "Heinrich Wagner",
    "Grillparzer",
    "Friedrich Schmid",
    "Roſa Mayreder",
];

const LOCATIONS: &[&str] = &[
    "Wien",
    "Graz",
    "Linz",
    "Salzburg",
    "Innsbruck",
    "Prag",
    "Trieſt",
    "Brünn",
    "Lemberg",
    "Nieder-Oeſterreich",
    "St. Pölten",
];

const ORGANIZATIONS: &[&str] = &[
    "Wiener Zeitung",
    "k. k. Statthalterei",
    "Nordbahn",
    "Creditanſtalt",
    "Hofoper",
    "Gemeinderath",
    "Südbahn-Geſellſchaft",
    "Akademie der Wiſſenſchaften",
];

const TEMPLATES: &[&str] = &[
    "{PER} iſt geſtern nach {LOC} abgereiſt .",
    "Die {ORG} meldet aus {LOC} , daß {PER} dort eingetroffen iſt .",
    "In {LOC} wurde die {ORG} feierlich eröffnet .",
    "Herr {PER} aus {LOC} hat der {ORG} eine Spende übergeben .",
    "Nach Berichten aus {LOC} hat {PER} ſein Amt niedergelegt .",
    "Der {ORG} verſammelte ſich am Montag in {LOC} .",
    "Frau {PER} ſchreibt uns aus {LOC} .",
    "Die Verhandlung vor der {ORG} wurde vertagt .",
    "Geſtern Abend gab {PER} ein Concert in der {ORG} .",
    "Wie man uns aus {LOC} mittheilt , iſt das Wetter dort ſehr kalt .",
    "Die Preiſe am Markte zu {LOC} ſind neuerdings geſtiegen .",
    "{PER} wurde von der {ORG} zum Ehrenmitgliede ernannt .",
];

/// Tagged splits plus a plain corpus and word vectors covering both.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub train: TaggedCorpus,
    pub dev: TaggedCorpus,
    pub test: TaggedCorpus,
    /// One sentence per line, contemporary spelling.
    pub plain: String,
    /// `word v1 … v16` lines.
    pub vectors: String,
}

fn modernize(s: &str) -> String {
    s.replace('ſ', "s").replace("daß", "dass").replace("Oeſterreich", "Österreich")
}

/// Fills one template; returns `(token, IOB2 tag)` pairs.
fn fill<R: Rng>(template: &str, rng: &mut R) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for word in template.split(' ') {
        let (pool, label) = match word {
            "{PER}" => (PERSONS, "PER"),
            "{LOC}" => (LOCATIONS, "LOC"),
            "{ORG}" => (ORGANIZATIONS, "ORG"),
            _ => {
                out.push((word.to_string(), "O".to_string()));
                continue;
            }
        };
        let name = pool.choose(rng).unwrap();
        for (i, part) in name.split(' ').enumerate() {
            let prefix = if i == 0 { Prefix::B } else { Prefix::I };
            out.push((part.to_string(), format_tag(prefix, label)));
        }
    }
    out
}

fn tagged<R: Rng>(n: usize, split: Split, rng: &mut R) -> TaggedCorpus {
    let sentences = (0..n)
        .map(|i| {
            // every template appears before any repeats
            let template = TEMPLATES[(i + rng.gen_range(0..TEMPLATES.len())) % TEMPLATES.len()];
            let tokens = fill(template, rng)
                .into_iter()
                .map(|(w, t)| Token::new(w).expect("template tokens have no spaces").with_gold(t))
                .collect();
            Sentence::new(tokens).expect("templates are non-empty")
        })
        .collect();
    TaggedCorpus::new(sentences, TagScheme::Iob2, split).expect("templates are well-formed")
}

pub fn generate(seed: u64) -> ToyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = tagged(TRAIN_SENTENCES, Split::Train, &mut rng);
    let dev = tagged(DEV_SENTENCES, Split::Dev, &mut rng);
    let test = tagged(TEST_SENTENCES, Split::Test, &mut rng);

    let mut plain = String::new();
    for _ in 0..PLAIN_LINES {
        let template = TEMPLATES.choose(&mut rng).unwrap();
        let words: Vec<String> = fill(template, &mut rng).into_iter().map(|(w, _)| w).collect();
        plain.push_str(&modernize(&words.join(" ")));
        plain.push('\n');
    }

    let mut words = BTreeSet::new();
    for c in [&train, &dev, &test] {
        for s in &c.sentences {
            words.extend(s.tokens().iter().map(|t| t.text.clone()));
        }
    }
    words.extend(plain.split_whitespace().map(str::to_string));
    let mut vectors = String::new();
    for w in &words {
        vectors.push_str(w);
        for _ in 0..VECTOR_DIM {
            vectors.push_str(&format!(" {:.4}", rng.gen_range(-1.0..1.0)));
        }
        vectors.push('\n');
    }

    ToyData {
        train,
        dev,
        test,
        plain,
        vectors,
    }
}

/// The first ten training sentences.
pub fn overfit_corpus(seed: u64) -> TaggedCorpus {
    let mut train = generate(seed).train;
    train.sentences.truncate(10);
    train
}

/// Writes `train.conll`, `dev.conll`, `test.conll`, `plain.txt` and
/// `vectors.txt` into `dir`.
pub fn write_toy_data(data: &ToyData, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_conll_file(&data.train, dir.join("train.conll"))?;
    write_conll_file(&data.dev, dir.join("dev.conll"))?;
    write_conll_file(&data.test, dir.join("test.conll"))?;
    fs::File::create(dir.join("plain.txt"))?.write_all(data.plain.as_bytes())?;
    fs::File::create(dir.join("vectors.txt"))?.write_all(data.vectors.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{entity_counts, extract_char_vocab, CharVocabulary};

    #[test]
    fn deterministic_and_sized() {
        let a = generate(7);
        let b = generate(7);
        assert_eq!(a.train, b.train);
        assert_eq!(a.plain, b.plain);
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (50, 15, 15));
        assert_eq!(a.plain.lines().count(), PLAIN_LINES);
        assert_ne!(generate(8).train, a.train);
    }

    #[test]
    fn all_entity_types_occur() {
        let counts = entity_counts(&generate(1).train).unwrap();
        for label in ["LOC", "ORG", "PER"] {
            assert!(counts[label] > 0, "{label}");
        }
        assert_eq!(counts["MISC"], 0);
    }

    #[test]
    fn historic_characters_only_in_tagged_data() {
        let d = generate(1);
        let tagged = extract_char_vocab(&[&d.train, &d.dev, &d.test]);
        let plain = CharVocabulary::from_text(&d.plain);
        assert!(tagged.contains('ſ'));
        assert!(!plain.contains('ſ'));
    }

    #[test]
    fn vectors_cover_every_word() {
        let d = generate(2);
        let table = crate::embed::WordEmbeddingTable::parse(d.vectors.as_bytes()).unwrap();
        assert_eq!(table.dim(), VECTOR_DIM);
        for s in &d.train.sentences {
            for t in s.tokens() {
                assert!(table.contains(&t.text), "{}", t.text);
            }
        }
    }
}
