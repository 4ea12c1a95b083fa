//! Validated domain types shared across the toolkit.
//!
//! Everything here is immutable once built. Constructors check the type
//! invariants and refuse to repair bad input.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for score data read from outside the toolkit.
pub const EXTERNAL_ROW_TOLERANCE: f64 = 1e-6;
/// Row-sum tolerance for rows the toolkit produces itself.
pub const INTERNAL_ROW_TOLERANCE: f64 = 1e-9;

/// A known class index, or `None` for an unlabeled sample.
pub type Label = Option<usize>;

/// N×K row-stochastic matrix of class probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    num_classes: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// Validates nested rows against the external tolerance.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        validate_score_matrix(rows)
    }

    /// Validates a flat row-major buffer.
    pub fn from_flat(num_classes: usize, values: Vec<f64>, tolerance: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        if !values.len().is_multiple_of(num_classes) {
            return Err(Error::RaggedRow {
                row: values.len() / num_classes,
                expected: num_classes,
                found: values.len() % num_classes,
            });
        }
        for (i, row) in values.chunks_exact(num_classes).enumerate() {
            check_row(i, row, tolerance)?;
        }
        Ok(Self { num_classes, values })
    }

    /// A matrix with zero rows.
    pub fn empty(num_classes: usize) -> Result<Self> {
        Self::from_flat(num_classes, Vec::new(), EXTERNAL_ROW_TOLERANCE)
    }

    pub fn num_samples(&self) -> usize {
        self.values.len() / self.num_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.num_classes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest probability in row `i`; the lowest index wins ties.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ScoreMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.num_classes);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        ScoreMatrix { num_classes: self.num_classes, values }
    }

    /// Builds from rows the caller has already normalized. Checked against the
    /// internal tolerance.
    pub(crate) fn from_internal(num_classes: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_flat(num_classes, values, INTERNAL_ROW_TOLERANCE)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

fn check_row(i: usize, row: &[f64], tolerance: f64) -> Result<()> {
    for (j, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFiniteInput { row: i, col: j });
        }
        if p < 0.0 {
            return Err(Error::NegativeEntry { row: i, col: j, value: p });
        }
    }
    for (j, &p) in row.iter().enumerate() {
        if p > 1.0 {
            return Err(Error::EntryAboveOne { row: i, col: j, value: p });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::RowSumOutOfTolerance { row: i, sum, tolerance });
    }
    Ok(())
}

/// Checks a rectangular matrix of probabilities without renormalizing it.
pub fn validate_score_matrix<R: AsRef<[f64]>>(raw: &[R]) -> Result<ScoreMatrix> {
    let num_classes = raw.first().map_or(0, |r| r.as_ref().len());
    if num_classes < 2 {
        return Err(Error::TooFewClasses(num_classes));
    }
    let mut values = Vec::with_capacity(raw.len() * num_classes);
    for (i, row) in raw.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != num_classes {
            return Err(Error::RaggedRow { row: i, expected: num_classes, found: row.len() });
        }
        check_row(i, row, EXTERNAL_ROW_TOLERANCE)?;
        values.extend_from_slice(row);
    }
    Ok(ScoreMatrix { num_classes, values })
}

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows<R: AsRef<[f64]>>(logits: &[R]) -> Result<ScoreMatrix> {
    let num_classes = logits.first().map_or(0, |r| r.as_ref().len());
    if num_classes < 2 {
        return Err(Error::TooFewClasses(num_classes));
    }
    let mut values = Vec::with_capacity(logits.len() * num_classes);
    for (i, row) in logits.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != num_classes {
            return Err(Error::RaggedRow { row: i, expected: num_classes, found: row.len() });
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput { row: i, col: j });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        values.extend(row.iter().map(|&x| (x - max).exp()));
        let sum: f64 = values[start..].iter().sum();
        values[start..].iter_mut().for_each(|v| *v /= sum);
    }
    ScoreMatrix::from_internal(num_classes, values)
}

/// Divides a non-negative row by its sum unless it is already within 1e-12
/// of 1. Rows that already sum to one are left bit-for-bit untouched.
pub(crate) fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-12 && sum > 0.0 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
}

/// A score matrix joined with sample ids and (optional) true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    ids: Vec<String>,
    labels: Vec<Label>,
    scores: ScoreMatrix,
}

impl LabeledScores {
    pub fn new(ids: Vec<String>, labels: Vec<Label>, scores: ScoreMatrix) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::LengthMismatch { what: "ids vs labels", left: ids.len(), right: labels.len() });
        }
        if ids.len() != scores.num_samples() {
            return Err(Error::LengthMismatch {
                what: "ids vs score rows",
                left: ids.len(),
                right: scores.num_samples(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSampleId(id.clone()));
            }
        }
        let k = scores.num_classes();
        for (id, label) in ids.iter().zip(&labels) {
            if let Some(l) = *label {
                if l >= k {
                    return Err(Error::LabelOutOfRange { id: id.clone(), label: l, num_classes: k });
                }
            }
        }
        Ok(Self { ids, labels, scores })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.num_classes()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    /// All labels, or `UnknownLabel` naming the first unlabeled sample.
    pub fn known_labels(&self) -> Result<Vec<usize>> {
        self.ids.iter().zip(&self.labels).map(|(id, l)| l.ok_or_else(|| Error::UnknownLabel(id.clone()))).collect()
    }

    /// Sub-collection at `indices`, in that order. Indices must be distinct.
    pub fn select(&self, indices: &[usize]) -> LabeledScores {
        LabeledScores {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            scores: self.scores.select(indices),
        }
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Label>, ScoreMatrix) {
        (self.ids, self.labels, self.scores)
    }
}

/// How conformity scores were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `1 - p[y]` for the candidate class `y`.
    OneMinusTrueClassProb,
}

/// A calibrated threshold together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationArtifact {
    alpha: f64,
    n_calibration: usize,
    num_classes: usize,
    q_hat: f64,
    score_kind: ScoreKind,
    created_from: String,
}

impl CalibrationArtifact {
    pub fn new(
        alpha: f64,
        n_calibration: usize,
        num_classes: usize,
        q_hat: f64,
        score_kind: ScoreKind,
        created_from: impl Into<String>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if n_calibration == 0 {
            return Err(Error::EmptyCalibrationSet);
        }
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        if !(0.0..=1.0).contains(&q_hat) {
            return Err(Error::InvalidConfig(format!("q_hat {q_hat} outside [0, 1]")));
        }
        Ok(Self { alpha, n_calibration, num_classes, q_hat, score_kind, created_from: created_from.into() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_calibration(&self) -> usize {
        self.n_calibration
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn q_hat(&self) -> f64 {
        self.q_hat
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn created_from(&self) -> &str {
        &self.created_from
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

/// Per-sample prediction sets, each a strictly ascending list of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSetBatch {
    ids: Vec<String>,
    sets: Vec<Vec<usize>>,
    num_classes: usize,
    q_hat_used: f64,
    allow_empty: bool,
}

impl PredictionSetBatch {
    pub fn new(
        ids: Vec<String>,
        sets: Vec<Vec<usize>>,
        num_classes: usize,
        q_hat_used: f64,
        allow_empty: bool,
    ) -> Result<Self> {
        if ids.len() != sets.len() {
            return Err(Error::LengthMismatch { what: "ids vs sets", left: ids.len(), right: sets.len() });
        }
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        for (id, set) in ids.iter().zip(&sets) {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::MalformedSetCell(format!("{id}: set {set:?} is not strictly ascending")));
            }
            if set.last().is_some_and(|&c| c >= num_classes) {
                return Err(Error::MalformedSetCell(format!("{id}: set {set:?} exceeds {num_classes} classes")));
            }
            if !allow_empty && set.is_empty() {
                return Err(Error::MalformedSetCell(format!("{id}: empty set while empty sets are disallowed")));
            }
        }
        Ok(Self { ids, sets, num_classes, q_hat_used, allow_empty })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn q_hat_used(&self) -> f64 {
        self.q_hat_used
    }

    pub fn allow_empty(&self) -> bool {
        self.allow_empty
    }
}
