//! Split conformal calibration and prediction sets.
//!
//! Conformity score of class `y` for a score row `p` is `1 - p[y]`. The
//! threshold `q_hat` is the `ceil((n + 1)(1 - alpha))`-th smallest
//! calibration score; class `y` enters the prediction set iff
//! `1 - p[y] <= q_hat`. When the rank exceeds `n` the threshold is 1 and
//! every set is the full label space.
//!
//! Under exchangeable calibration and test data this gives marginal coverage
//! in `[1 - alpha, 1 - alpha + 1/(n + 1)]` (the upper end assuming no ties).

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::{
    argmax, check_alpha, CalibrationArtifact, LabeledScores, PredictionSetBatch, ScoreKind, ScoreMatrix,
};

/// Absolute slack when rounding `(n + 1)(1 - alpha)` up, so that products
/// like `100 * 0.9` land on the intended integer.
const RANK_SLACK: f64 = 1e-9;

/// Nonconformity of a class given its probability.
#[inline]
pub fn conformity_score(p: f64) -> f64 {
    1.0 - p
}

/// `1 - p_i[y_i]` for each sample, in input order.
pub fn conformity_scores(data: &LabeledScores) -> Result<Vec<f64>> {
    let labels = data.known_labels()?;
    Ok(true_class_scores(data.scores(), &labels))
}

pub(crate) fn true_class_scores(scores: &ScoreMatrix, labels: &[usize]) -> Vec<f64> {
    scores.rows().zip(labels).map(|(row, &y)| conformity_score(row[y])).collect()
}

/// One-based order-statistic rank `ceil((n + 1)(1 - alpha))`, at least 1.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha) - RANK_SLACK;
    (target.ceil().max(1.0)) as usize
}

/// The conformal threshold for a bag of calibration scores.
///
/// Uses selection rather than a full sort. Ties are kept as duplicates.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let rank = quantile_rank(scores.len(), alpha);
    if rank > scores.len() {
        return Ok(1.0);
    }
    let mut work = scores.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}

/// Calibrates a threshold on labeled calibration scores.
pub fn calibrate(calib: &LabeledScores, alpha: f64) -> Result<CalibrationArtifact> {
    calibrate_with_provenance(calib, alpha, "")
}

pub fn calibrate_with_provenance(calib: &LabeledScores, alpha: f64, created_from: &str) -> Result<CalibrationArtifact> {
    check_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let scores = conformity_scores(calib)?;
    let q_hat = conformal_quantile(&scores, alpha)?;
    CalibrationArtifact::new(
        alpha,
        calib.len(),
        calib.num_classes(),
        q_hat,
        ScoreKind::OneMinusTrueClassProb,
        created_from,
    )
}

/// Classes admitted by `q_hat` for one score row, ascending.
///
/// With `allow_empty == false` an empty result is replaced by the argmax.
pub fn prediction_set(row: &[f64], q_hat: f64, allow_empty: bool) -> Vec<usize> {
    let mut set: Vec<usize> = (0..row.len()).filter(|&y| conformity_score(row[y]) <= q_hat).collect();
    if set.is_empty() && !allow_empty {
        set.push(argmax(row));
    }
    set
}

/// Whether `label` would be in the prediction set for `row`.
#[inline]
pub fn set_contains(row: &[f64], label: usize, q_hat: f64, allow_empty: bool) -> bool {
    if conformity_score(row[label]) <= q_hat {
        return true;
    }
    // forced argmax only kicks in when nothing else qualified
    !allow_empty && argmax(row) == label && row.iter().all(|&p| conformity_score(p) > q_hat)
}

/// Prediction sets for every row of `scores`.
pub fn predict_sets(
    ids: &[String],
    scores: &ScoreMatrix,
    artifact: &CalibrationArtifact,
    allow_empty: bool,
) -> Result<PredictionSetBatch> {
    predict_sets_with(ids, scores, artifact, allow_empty, Execution::default())
}

pub fn predict_sets_with(
    ids: &[String],
    scores: &ScoreMatrix,
    artifact: &CalibrationArtifact,
    allow_empty: bool,
    exec: Execution,
) -> Result<PredictionSetBatch> {
    if scores.num_classes() != artifact.num_classes() {
        return Err(Error::ClassCountMismatch { expected: artifact.num_classes(), found: scores.num_classes() });
    }
    if ids.len() != scores.num_samples() {
        return Err(Error::LengthMismatch { what: "ids vs score rows", left: ids.len(), right: scores.num_samples() });
    }
    let q_hat = artifact.q_hat();
    let sets = par::map_indexed(scores.num_samples(), exec, |i| prediction_set(scores.row(i), q_hat, allow_empty));
    PredictionSetBatch::new(ids.to_vec(), sets, scores.num_classes(), q_hat, allow_empty)
}

/// Convenience wrapper over [`predict_sets`] for a labeled collection.
pub fn predict_labeled(
    test: &LabeledScores,
    artifact: &CalibrationArtifact,
    allow_empty: bool,
) -> Result<PredictionSetBatch> {
    predict_sets(test.ids(), test.scores(), artifact, allow_empty)
}

/// Marginal coverage interval `(1 - alpha, min(1, 1 - alpha + 1/(n + 1)))`.
pub fn coverage_bounds(alpha: f64, n: usize) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::EmptyCalibrationSet);
    }
    let lower = 1.0 - alpha;
    Ok((lower, (lower + 1.0 / (n as f64 + 1.0)).min(1.0)))
}
