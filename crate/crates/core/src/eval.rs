//! Word-level segmentation scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Half-open character intervals of consecutive words.
pub fn spans_of<S: AsRef<str>>(words: &[S]) -> Vec<(usize, usize)> {
    let mut start = 0;
    words
        .iter()
        .map(|w| {
            let end = start + w.as_ref().chars().count();
            let span = (start, end);
            start = end;
            span
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SegEvalCounts {
    pub gold_words: usize,
    pub pred_words: usize,
    pub correct_words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SegEvalCounts {
    pub fn add(&mut self, other: SegEvalCounts) {
        self.gold_words += other.gold_words;
        self.pred_words += other.pred_words;
        self.correct_words += other.correct_words;
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct_words, self.pred_words);
        let recall = ratio(self.correct_words, self.gold_words);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn check_same_text<S: AsRef<str>>(index: usize, gold: &[S], pred: &[S]) -> Result<()> {
    let g: String = gold.iter().map(|w| w.as_ref()).collect();
    let p: String = pred.iter().map(|w| w.as_ref()).collect();
    if g != p {
        return Err(Error::invalid(format!(
            "sentence {}: gold and predicted characters differ",
            index + 1
        )));
    }
    Ok(())
}

pub fn sentence_counts<S: AsRef<str>>(gold: &[S], pred: &[S]) -> SegEvalCounts {
    let g: HashSet<_> = spans_of(gold).into_iter().collect();
    let p = spans_of(pred);
    SegEvalCounts {
        gold_words: g.len(),
        pred_words: p.len(),
        correct_words: p.iter().filter(|s| g.contains(s)).count(),
    }
}

/// Micro-averaged counts over sentence pairs.
pub fn counts<S: AsRef<str>, V: AsRef<[S]>>(gold: &[V], pred: &[V]) -> Result<SegEvalCounts> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = SegEvalCounts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        check_same_text(i, g.as_ref(), p.as_ref())?;
        total.add(sentence_counts(g.as_ref(), p.as_ref()));
    }
    Ok(total)
}

pub fn prf<S: AsRef<str>, V: AsRef<[S]>>(gold: &[V], pred: &[V]) -> Result<Prf> {
    Ok(counts(gold, pred)?.prf())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketScore {
    /// Inclusive lower bound in characters; the bucket is `[lower, lower + width)`.
    pub lower: usize,
    pub upper: usize,
    pub sentences: usize,
    pub counts: SegEvalCounts,
    pub prf: Prf,
}

/// Scores grouped by sentence length in characters; empty buckets are omitted.
pub fn f1_by_length<S: AsRef<str>, V: AsRef<[S]>>(
    gold: &[V],
    pred: &[V],
    bucket_width: usize,
) -> Result<Vec<BucketScore>> {
    if bucket_width == 0 {
        return Err(Error::invalid("bucket width must be >= 1"));
    }
    if gold.len() != pred.len() {
        return Err(Error::invalid("gold and predicted sentence counts differ"));
    }
    let mut buckets: BTreeMap<usize, (usize, SegEvalCounts)> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        check_same_text(i, g, p)?;
        let len: usize = g.iter().map(|w| w.as_ref().chars().count()).sum();
        let entry = buckets.entry(len / bucket_width).or_default();
        entry.0 += 1;
        entry.1.add(sentence_counts(g, p));
    }
    Ok(buckets
        .into_iter()
        .map(|(b, (n, c))| BucketScore {
            lower: b * bucket_width,
            upper: (b + 1) * bucket_width,
            sentences: n,
            counts: c,
            prf: c.prf(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityScore {
    pub word: String,
    pub gold_occurrences: usize,
    pub matched: usize,
    /// `None` when the word never occurs in the gold data.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityReport {
    pub entities: Vec<EntityScore>,
    /// Macro average over entities with a defined precision.
    pub average: Option<f64>,
}

/// Share of each target's gold occurrences that the prediction reproduces as an exact span.
pub fn entity_precision<S: AsRef<str>, V: AsRef<[S]>, W: AsRef<str>>(
    gold: &[V],
    pred: &[V],
    targets: &[W],
) -> Result<EntityReport> {
    if targets.is_empty() {
        return Err(Error::invalid("no target entities"));
    }
    if gold.len() != pred.len() {
        return Err(Error::invalid("gold and predicted sentence counts differ"));
    }
    let mut scores: Vec<EntityScore> = targets
        .iter()
        .map(|t| EntityScore {
            word: t.as_ref().to_string(),
            gold_occurrences: 0,
            matched: 0,
            precision: None,
        })
        .collect();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        check_same_text(i, g, p)?;
        let pred_spans: HashSet<_> = spans_of(p).into_iter().collect();
        for (word, span) in g.iter().zip(spans_of(g)) {
            for s in scores.iter_mut().filter(|s| s.word == word.as_ref()) {
                s.gold_occurrences += 1;
                if pred_spans.contains(&span) {
                    s.matched += 1;
                }
            }
        }
    }
    for s in &mut scores {
        if s.gold_occurrences > 0 {
            s.precision = Some(s.matched as f64 / s.gold_occurrences as f64);
        }
    }
    let defined: Vec<f64> = scores.iter().filter_map(|s| s.precision).collect();
    let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EntityReport {
        entities: scores,
        average,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub sentences: usize,
    pub counts: SegEvalCounts,
    pub prf: Prf,
    pub buckets: Option<Vec<BucketScore>>,
    pub entities: Option<EntityReport>,
}

pub fn score_report<S: AsRef<str>, V: AsRef<[S]>, W: AsRef<str>>(
    gold: &[V],
    pred: &[V],
    bucket_width: Option<usize>,
    targets: Option<&[W]>,
) -> Result<ScoreReport> {
    let c = counts(gold, pred)?;
    Ok(ScoreReport {
        sentences: gold.len(),
        counts: c,
        prf: c.prf(),
        buckets: bucket_width.map(|w| f1_by_length(gold, pred, w)).transpose()?,
        entities: targets.map(|t| entity_precision(gold, pred, t)).transpose()?,
    })
}

impl ScoreReport {
    /// Plain-text rendering: totals, then optional per-bucket and per-entity tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences\t{}", self.sentences);
        let _ = writeln!(out, "gold_words\t{}", self.counts.gold_words);
        let _ = writeln!(out, "pred_words\t{}", self.counts.pred_words);
        let _ = writeln!(out, "correct_words\t{}", self.counts.correct_words);
        let _ = writeln!(out, "precision\t{:.4}", self.prf.precision);
        let _ = writeln!(out, "recall\t{:.4}", self.prf.recall);
        let _ = writeln!(out, "f1\t{:.4}", self.prf.f1);
        if let Some(buckets) = &self.buckets {
            let _ = writeln!(out, "\n[length buckets]\nrange\tsentences\tprecision\trecall\tf1");
            for b in buckets {
                let _ = writeln!(
                    out,
                    "[{},{})\t{}\t{:.4}\t{:.4}\t{:.4}",
                    b.lower, b.upper, b.sentences, b.prf.precision, b.prf.recall, b.prf.f1
                );
            }
        }
        if let Some(ents) = &self.entities {
            let _ = writeln!(out, "\n[entities]\nword\tcount\tmatched\tprecision");
            for e in &ents.entities {
                let p = e.precision.map_or("undefined".to_string(), |p| format!("{p:.2}"));
                let _ = writeln!(out, "{}\t{}\t{}\t{}", e.word, e.gold_occurrences, e.matched, p);
            }
            let avg = ents.average.map_or("undefined".to_string(), |p| format!("{p:.2}"));
            let _ = writeln!(out, "average\t\t\t{avg}");
        }
        out
    }
}
