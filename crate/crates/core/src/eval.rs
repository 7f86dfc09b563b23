//! Span-level precision, recall and F1.
//!
//! A predicted entity counts only if a gold entity has the same label, start
//! and end. This is the CoNLL-2003 scorer's chunk semantics, computed on span
//! sets rather than by replaying its tag state machine.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{convert_tags, extract_spans, CorpusError, EntitySpan, Sentence, TagScheme, TaggedCorpus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sentence {sentence}: {reason}")]
    Mismatch { sentence: usize, reason: String },
    #[error("sentence {sentence}: {source}")]
    Tags {
        sentence: usize,
        source: crate::corpus::TagError,
    },
    #[error("no reports to average")]
    NoReports,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub pred_count: usize,
    pub true_positives: usize,
}

impl LabelScores {
    fn from_counts(tp: usize, gold: usize, pred: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, pred);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        LabelScores {
            precision,
            recall,
            f1,
            gold_count: gold,
            pred_count: pred,
            true_positives: tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub per_label: BTreeMap<String, LabelScores>,
}

impl EvalReport {
    /// Scores aligned per-sentence span lists.
    pub fn from_spans(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Self {
        assert_eq!(gold.len(), pred.len(), "span lists are not aligned");
        let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
        for (g, p) in gold.iter().zip(pred) {
            let gold_set: HashSet<&EntitySpan> = g.iter().collect();
            for s in g {
                counts.entry(s.label.clone()).or_default().1 += 1;
            }
            for s in p {
                let c = counts.entry(s.label.clone()).or_default();
                c.2 += 1;
                if gold_set.contains(s) {
                    c.0 += 1;
                }
            }
        }
        let (tp, n_gold, n_pred) = counts
            .values()
            .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
        if n_gold == 0 && n_pred == 0 {
            log::info!("no gold or predicted entities; F1 is reported as 0");
        }
        let micro = LabelScores::from_counts(tp, n_gold, n_pred);
        EvalReport {
            precision: micro.precision,
            recall: micro.recall,
            f1: micro.f1,
            true_positives: tp,
            false_positives: n_pred - tp,
            false_negatives: n_gold - tp,
            per_label: counts
                .into_iter()
                .map(|(l, (tp, g, p))| (l, LabelScores::from_counts(tp, g, p)))
                .collect(),
        }
    }

    pub fn gold_total(&self) -> usize {
        self.true_positives + self.false_negatives
    }

    pub fn pred_total(&self) -> usize {
        self.true_positives + self.false_positives
    }

    /// Aligned plain-text table, percentages with two decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_label
            .keys()
            .map(String::len)
            .chain(["overall".len()])
            .max()
            .unwrap_or(7);
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>7}  {:>7}  {:>6}  {:>6}",
            "label", "precision", "recall", "f1", "gold", "pred"
        );
        let mut row = |name: &str, s: &LabelScores| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.2}  {:>7.2}  {:>7.2}  {:>6}  {:>6}",
                name,
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.gold_count,
                s.pred_count
            );
        };
        for (label, s) in &self.per_label {
            row(label, s);
        }
        row(
            "overall",
            &LabelScores {
                precision: self.precision,
                recall: self.recall,
                f1: self.f1,
                gold_count: self.gold_total(),
                pred_count: self.pred_total(),
                true_positives: self.true_positives,
            },
        );
        out
    }
}

fn check_alignment(i: usize, g: &Sentence, p: &Sentence) -> Result<(), EvalError> {
    if g.len() != p.len() {
        return Err(EvalError::Mismatch {
            sentence: i,
            reason: format!("gold has {} tokens, prediction has {}", g.len(), p.len()),
        });
    }
    if let Some(k) = g.tokens().iter().zip(p.tokens()).position(|(a, b)| a.text != b.text) {
        return Err(EvalError::Mismatch {
            sentence: i,
            reason: format!(
                "token {k} is {:?} in gold and {:?} in prediction",
                g.tokens()[k].text,
                p.tokens()[k].text
            ),
        });
    }
    Ok(())
}

fn gold_of(i: usize, s: &Sentence) -> Result<Vec<&str>, EvalError> {
    s.gold_tags().ok_or_else(|| EvalError::Mismatch {
        sentence: i,
        reason: "gold tags missing".into(),
    })
}

/// The predicted column when every token has one, the gold column otherwise.
fn pred_of(i: usize, s: &Sentence) -> Result<Vec<&str>, EvalError> {
    match s.predicted_tags() {
        Some(t) => Ok(t),
        None => gold_of(i, s),
    }
}

fn spans(i: usize, tags: &[&str], scheme: TagScheme) -> Result<Vec<EntitySpan>, EvalError> {
    let iob2 = convert_tags(tags, scheme, TagScheme::Iob2).map_err(|source| EvalError::Tags { sentence: i, source })?;
    extract_spans(&iob2, TagScheme::Iob2).map_err(|source| EvalError::Tags { sentence: i, source })
}

/// Compares the gold tags of `gold` with the predictions in `pred`. `pred`
/// contributes its predicted column, or its gold column when it has none (a
/// prediction file read with a single tag column).
pub fn evaluate(gold: &TaggedCorpus, pred: &TaggedCorpus) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Mismatch {
            sentence: gold.len().min(pred.len()),
            reason: format!("gold has {} sentences, prediction has {}", gold.len(), pred.len()),
        });
    }
    let mut g_spans = Vec::with_capacity(gold.len());
    let mut p_spans = Vec::with_capacity(gold.len());
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        check_alignment(i, g, p)?;
        g_spans.push(spans(i, &gold_of(i, g)?, gold.scheme)?);
        p_spans.push(spans(i, &pred_of(i, p)?, pred.scheme)?);
    }
    Ok(EvalReport::from_spans(&g_spans, &p_spans))
}

/// Gold against predicted tags within one corpus.
pub fn evaluate_predictions(corpus: &TaggedCorpus) -> Result<EvalReport, EvalError> {
    evaluate(corpus, corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean_f1: f64,
    pub run_f1: Vec<f64>,
    pub reports: Vec<EvalReport>,
}

/// Arithmetic mean of micro F1 over runs, keeping the individual reports.
pub fn average_runs(reports: &[EvalReport]) -> Result<RunSummary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let run_f1: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    Ok(RunSummary {
        mean_f1: run_f1.iter().sum::<f64>() / run_f1.len() as f64,
        run_f1,
        reports: reports.to_vec(),
    })
}

/// Writes `token gold pred` lines in IOB2, one blank line after each
/// sentence, as read by the conlleval script.
pub fn write_predictions<W: Write>(gold: &TaggedCorpus, pred: &TaggedCorpus, mut w: W) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Mismatch {
            sentence: gold.len().min(pred.len()),
            reason: "sentence counts differ".into(),
        });
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        check_alignment(i, g, p)?;
        let wrap = |source| EvalError::Tags { sentence: i, source };
        let gt = convert_tags(&gold_of(i, g)?, gold.scheme, TagScheme::Iob2).map_err(wrap)?;
        let pt = convert_tags(&pred_of(i, p)?, pred.scheme, TagScheme::Iob2).map_err(wrap)?;
        for ((tok, a), b) in g.tokens().iter().zip(&gt).zip(&pt) {
            writeln!(w, "{} {a} {b}", tok.text)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_conll_predictions<P: AsRef<Path>>(gold: &TaggedCorpus, pred: &TaggedCorpus, path: P) -> Result<(), EvalError> {
    write_predictions(gold, pred, BufWriter::new(File::create(path)?))
}
