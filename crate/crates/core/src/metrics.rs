//! Evaluation battery: coverage, set sizes, uncertainty histograms and
//! macro-averaged classification metrics.
//!
//! A sample is "correct" when the argmax of its score row (lowest index on
//! ties) equals its true label. The uncertainty value of a row is
//! `1 - max_y p[y]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax, Label, LabeledScores, PredictionSetBatch, ScoreMatrix};

/// Default number of equal-width uncertainty bins.
pub const DEFAULT_BINS: usize = 20;

fn known(ids: &[String], labels: &[Label]) -> Result<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::UnknownLabel(ids.get(i).cloned().unwrap_or_else(|| i.to_string()))))
        .collect()
}

fn same_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, left, right })
    }
}

/// Fraction of samples whose true label lies in their set.
pub fn coverage(sets: &PredictionSetBatch, labels: &[Label]) -> Result<f64> {
    same_len("sets vs labels", sets.len(), labels.len())?;
    let labels = known(sets.ids(), labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let covered = sets.sets().iter().zip(&labels).filter(|(s, y)| s.binary_search(y).is_ok()).count();
    Ok(covered as f64 / labels.len() as f64)
}

/// Average set sizes overall and within the argmax-correct and
/// argmax-incorrect strata. `None` marks an empty stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetSizeStats {
    pub avg_all: Option<f64>,
    pub avg_correct: Option<f64>,
    pub avg_incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

fn mean(total: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| total as f64 / n as f64)
}

pub fn set_size_stats(sets: &PredictionSetBatch, scores: &ScoreMatrix, labels: &[Label]) -> Result<SetSizeStats> {
    same_len("sets vs labels", sets.len(), labels.len())?;
    same_len("sets vs score rows", sets.len(), scores.num_samples())?;
    let labels = known(sets.ids(), labels)?;
    let (mut sum_c, mut n_c, mut sum_i, mut n_i) = (0, 0, 0, 0);
    for (i, (set, &y)) in sets.sets().iter().zip(&labels).enumerate() {
        if scores.argmax(i) == y {
            sum_c += set.len();
            n_c += 1;
        } else {
            sum_i += set.len();
            n_i += 1;
        }
    }
    Ok(SetSizeStats {
        avg_all: mean(sum_c + sum_i, n_c + n_i),
        avg_correct: mean(sum_c, n_c),
        avg_incorrect: mean(sum_i, n_i),
        n_correct: n_c,
        n_incorrect: n_i,
    })
}

/// Coverage among samples whose set has a given size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeCoverage {
    /// Samples with `|C| == k`.
    pub count: usize,
    /// Coverage among those samples.
    pub coverage: f64,
    /// Samples with `|C| <= k`.
    pub cumulative_count: usize,
    /// Coverage among samples with `|C| <= k`.
    pub cumulative_coverage: f64,
}

/// Per realized set size `k`: sample count and coverage, plus the
/// cumulative `|C| <= k` variant.
pub fn coverage_by_set_size(sets: &PredictionSetBatch, labels: &[Label]) -> Result<BTreeMap<usize, SizeCoverage>> {
    same_len("sets vs labels", sets.len(), labels.len())?;
    let labels = known(sets.ids(), labels)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (set, y) in sets.sets().iter().zip(&labels) {
        let e = tally.entry(set.len()).or_default();
        e.0 += 1;
        e.1 += usize::from(set.binary_search(y).is_ok());
    }
    let (mut cum_n, mut cum_hit) = (0, 0);
    Ok(tally
        .into_iter()
        .map(|(k, (n, hit))| {
            cum_n += n;
            cum_hit += hit;
            let entry = SizeCoverage {
                count: n,
                coverage: hit as f64 / n as f64,
                cumulative_count: cum_n,
                cumulative_coverage: cum_hit as f64 / cum_n as f64,
            };
            (k, entry)
        })
        .collect())
}

/// `1 - max_y p[y]` per row.
pub fn uncertainty_values(scores: &ScoreMatrix) -> Vec<f64> {
    scores.rows().map(|r| 1.0 - r[argmax(r)]).collect()
}

/// Equal-width histogram over `[0, 1]`. Bins are left-closed, right-open,
/// except the last which also includes 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::ZeroBins);
        }
        let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Ok(Self { bin_edges, counts: vec![0; bins] })
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let last = self.counts.len() - 1;
        self.bin_edges.partition_point(|&e| e <= value).saturating_sub(1).min(last)
    }

    pub fn add(&mut self, value: f64) {
        let b = self.bin_of(value);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Uncertainty histograms for argmax-correct and argmax-incorrect samples.
pub fn uncertainty_histograms(scores: &ScoreMatrix, labels: &[Label], bins: usize) -> Result<(Histogram, Histogram)> {
    same_len("score rows vs labels", scores.num_samples(), labels.len())?;
    let ids: Vec<String> = (0..labels.len()).map(|i| format!("row {i}")).collect();
    let labels = known(&ids, labels)?;
    let mut correct = Histogram::new(bins)?;
    let mut incorrect = Histogram::new(bins)?;
    for (i, (u, &y)) in uncertainty_values(scores).into_iter().zip(&labels).enumerate() {
        if scores.argmax(i) == y {
            correct.add(u);
        } else {
            incorrect.add(u);
        }
    }
    Ok((correct, incorrect))
}

/// Accuracy plus macro-averaged precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Macro averages run over all K classes; 0/0 counts as 0.
pub fn classification_metrics(scores: &ScoreMatrix, labels: &[Label]) -> Result<ClassificationMetrics> {
    same_len("score rows vs labels", scores.num_samples(), labels.len())?;
    let ids: Vec<String> = (0..labels.len()).map(|i| format!("row {i}")).collect();
    let labels = known(&ids, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let k = scores.num_classes();
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut actual = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        let p = scores.argmax(i);
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[y] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let p = ratio(tp[c], predicted[c]);
        let r = ratio(tp[c], actual[c]);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        sp += p;
        sr += r;
        sf += f;
    }
    let kf = k as f64;
    Ok(ClassificationMetrics {
        accuracy: ratio(tp.iter().sum(), labels.len()),
        macro_precision: sp / kf,
        macro_recall: sr / kf,
        macro_f1: sf / kf,
    })
}

/// Everything the evaluation battery computes for one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub num_classes: usize,
    pub q_hat_used: f64,
    pub coverage: f64,
    pub avg_set_size: f64,
    /// `None` when no test sample is argmax-correct.
    pub avg_set_size_correct: Option<f64>,
    /// `None` when every test sample is argmax-correct.
    pub avg_set_size_incorrect: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub coverage_by_set_size: BTreeMap<usize, SizeCoverage>,
    pub uncertainty_histogram_correct: Histogram,
    pub uncertainty_histogram_incorrect: Histogram,
}

/// Runs every metric over a labeled test set and its prediction sets.
/// Both inputs must list the same ids in the same order.
pub fn build_report(test: &LabeledScores, sets: &PredictionSetBatch, bins: usize) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    same_len("test rows vs sets", test.len(), sets.len())?;
    if let Some(row) = test.ids().iter().zip(sets.ids()).position(|(a, b)| a != b) {
        return Err(Error::IdSequenceMismatch { model: 1, row });
    }
    if test.num_classes() != sets.num_classes() {
        return Err(Error::ClassCountMismatch { expected: test.num_classes(), found: sets.num_classes() });
    }
    test.known_labels()?;
    let labels = test.labels();
    let scores = test.scores();
    let sizes = set_size_stats(sets, scores, labels)?;
    let cls = classification_metrics(scores, labels)?;
    let (h_correct, h_incorrect) = uncertainty_histograms(scores, labels, bins)?;
    Ok(EvaluationReport {
        n_test: test.len(),
        num_classes: test.num_classes(),
        q_hat_used: sets.q_hat_used(),
        coverage: coverage(sets, labels)?,
        avg_set_size: sizes.avg_all.unwrap_or(0.0),
        avg_set_size_correct: sizes.avg_correct,
        avg_set_size_incorrect: sizes.avg_incorrect,
        n_correct: sizes.n_correct,
        n_incorrect: sizes.n_incorrect,
        accuracy: cls.accuracy,
        macro_precision: cls.macro_precision,
        macro_recall: cls.macro_recall,
        macro_f1: cls.macro_f1,
        coverage_by_set_size: coverage_by_set_size(sets, labels)?,
        uncertainty_histogram_correct: h_correct,
        uncertainty_histogram_incorrect: h_incorrect,
    })
}
