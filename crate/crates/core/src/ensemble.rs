//! Score-level fusion of several expert models.
//!
//! Models are combined by a per-class arithmetic mean of their probability
//! rows, optionally weighted. Samples are matched by id, never by position.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::{normalize_row, LabeledScores, ScoreMatrix};

fn check_weights(weights: &[f64], models: usize) -> Result<()> {
    if weights.len() != models {
        return Err(Error::BadWeights(format!("{} weights for {models} models", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::BadWeights(format!("weight {w} is negative or non-finite")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Writes the weighted mean of `rows` into `out`.
pub(crate) fn fuse_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, weights: &[f64], out: &mut [f64]) {
    let mut terms = Vec::with_capacity(weights.len());
    for (c, slot) in out.iter_mut().enumerate() {
        let mut column = rows.clone().map(|r| r[c]);
        let first = column.next().unwrap_or(0.0);
        if column.all(|p| p == first) {
            *slot = first;
            continue;
        }
        terms.clear();
        terms.extend(rows.clone().zip(weights).map(|(r, &w)| w * r[c]));
        // summing in sorted order makes the result independent of model order
        terms.sort_by(f64::total_cmp);
        *slot = terms.iter().sum();
    }
    normalize_row(out);
}

/// Weighted mean of the models' score rows; uniform weights when `None`.
///
/// All models must list the same ids in the same order, agree on the number
/// of classes, and agree on every label.
pub fn average_scores(models: &[LabeledScores], weights: Option<&[f64]>) -> Result<LabeledScores> {
    average_scores_with(models, weights, Execution::default())
}

pub fn average_scores_with(
    models: &[LabeledScores],
    weights: Option<&[f64]>,
    exec: Execution,
) -> Result<LabeledScores> {
    if models.len() < 2 {
        return Err(Error::TooFewModels(models.len()));
    }
    let uniform;
    let weights = match weights {
        Some(w) => {
            check_weights(w, models.len())?;
            w
        }
        None => {
            uniform = vec![1.0 / models.len() as f64; models.len()];
            &uniform[..]
        }
    };

    let first = &models[0];
    let k = first.num_classes();
    for (m, model) in models.iter().enumerate().skip(1) {
        if model.num_classes() != k {
            return Err(Error::ClassCountMismatch { expected: k, found: model.num_classes() });
        }
        if model.len() != first.len() {
            return Err(Error::IdSequenceMismatch { model: m, row: model.len().min(first.len()) });
        }
        if let Some(row) = first.ids().iter().zip(model.ids()).position(|(a, b)| a != b) {
            return Err(Error::IdSequenceMismatch { model: m, row });
        }
        if let Some(row) = first.labels().iter().zip(model.labels()).position(|(a, b)| a != b) {
            return Err(Error::LabelMismatch { model: m, id: first.ids()[row].clone() });
        }
    }

    let rows = par::map_indexed(first.len(), exec, |i| {
        let mut out = vec![0.0; k];
        fuse_rows(models.iter().map(|m| m.scores().row(i)), weights, &mut out);
        out
    });
    let scores = ScoreMatrix::from_internal(k, rows.concat())?;
    LabeledScores::new(first.ids().to_vec(), first.labels().to_vec(), scores)
}

/// Reorders every model to the first model's id order.
pub fn align_by_id(models: &[LabeledScores]) -> Result<Vec<LabeledScores>> {
    let Some(first) = models.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(models.len());
    out.push(first.clone());
    for (m, model) in models.iter().enumerate().skip(1) {
        if model.len() != first.len() {
            return Err(Error::IdSetMismatch {
                model: m,
                detail: format!("{} samples vs {}", model.len(), first.len()),
            });
        }
        let index: HashMap<&str, usize> = model.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let order = first
            .ids()
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::IdSetMismatch { model: m, detail: format!("id '{id}' is missing") })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(model.select(&order));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_score_matrix;
    use proptest::prelude::*;

    fn model(ids: &[&str], rows: Vec<Vec<f64>>, labels: Vec<Option<usize>>) -> LabeledScores {
        LabeledScores::new(ids.iter().map(|s| s.to_string()).collect(), labels, validate_score_matrix(&rows).unwrap())
            .unwrap()
    }

    #[test]
    fn uniform_mean_of_three() {
        let a = model(&["x"], vec![vec![0.6, 0.4]], vec![Some(1)]);
        let b = model(&["x"], vec![vec![0.2, 0.8]], vec![Some(1)]);
        let c = model(&["x"], vec![vec![0.4, 0.6]], vec![Some(1)]);
        let e = average_scores(&[a, b, c], None).unwrap();
        assert!((e.scores().row(0)[0] - 0.4).abs() < 1e-15);
        assert!((e.scores().row(0)[1] - 0.6).abs() < 1e-15);
        assert_eq!(e.labels(), &[Some(1)]);
    }

    #[test]
    fn identical_models_give_identical_output() {
        let a = model(&["x", "y"], vec![vec![0.25, 0.75], vec![0.5, 0.5]], vec![Some(1), None]);
        let e = average_scores(&[a.clone(), a.clone(), a.clone()], None).unwrap();
        assert_eq!(e, a);
    }

    #[test]
    fn degenerate_weights_select_first_model() {
        let a = model(&["x", "y"], vec![vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4]], vec![Some(0), Some(2)]);
        let b = model(&["x", "y"], vec![vec![0.1, 0.1, 0.8], vec![0.9, 0.05, 0.05]], vec![Some(0), Some(2)]);
        let e = average_scores(&[a.clone(), b], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(e.scores(), a.scores());
    }

    #[test]
    fn ensemble_argmax_can_differ_from_every_member() {
        let a = model(&["x"], vec![vec![0.5, 0.0, 0.5 - 0.1, 0.1]], vec![None]);
        let b = model(&["x"], vec![vec![0.0, 0.5, 0.4, 0.1]], vec![None]);
        let e = average_scores(&[a.clone(), b.clone()], None).unwrap();
        assert_eq!(a.scores().argmax(0), 0);
        assert_eq!(b.scores().argmax(0), 1);
        assert_eq!(e.scores().argmax(0), 2);
    }

    #[test]
    fn errors() {
        let a = model(&["x", "y"], vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![Some(0), Some(1)]);
        assert!(matches!(average_scores(std::slice::from_ref(&a), None), Err(Error::TooFewModels(1))));

        let swapped = model(&["y", "x"], vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![Some(1), Some(0)]);
        assert!(matches!(
            average_scores(&[a.clone(), swapped], None),
            Err(Error::IdSequenceMismatch { model: 1, row: 0 })
        ));

        let k3 = model(&["x", "y"], vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0]], vec![Some(0), Some(1)]);
        assert!(matches!(average_scores(&[a.clone(), k3], None), Err(Error::ClassCountMismatch { .. })));

        let relabeled = model(&["x", "y"], vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![Some(0), Some(0)]);
        assert!(matches!(average_scores(&[a.clone(), relabeled], None), Err(Error::LabelMismatch { model: 1, .. })));

        for w in [&[0.5, 0.6][..], &[1.5, -0.5], &[1.0], &[f64::NAN, 1.0]] {
            assert!(matches!(average_scores(&[a.clone(), a.clone()], Some(w)), Err(Error::BadWeights(_))));
        }
    }

    #[test]
    fn align_examples() {
        let a = model(&["a", "b"], vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![Some(0), Some(1)]);
        let b = model(&["b", "a"], vec![vec![0.3, 0.7], vec![0.6, 0.4]], vec![Some(1), Some(0)]);
        let aligned = align_by_id(&[a.clone(), b]).unwrap();
        assert_eq!(aligned[1].ids(), a.ids());
        assert_eq!(aligned[1].scores().row(0), &[0.6, 0.4]);
        assert_eq!(aligned[1].labels(), a.labels());

        let same = align_by_id(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same[1], a);

        let c = model(&["a", "z"], vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![None, None]);
        assert!(matches!(align_by_id(&[a, c]), Err(Error::IdSetMismatch { model: 1, .. })));
    }

    fn models(m: usize, n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
        prop::collection::vec(
            prop::collection::vec(
                prop::collection::vec(0.0f64..1.0, k).prop_map(|mut r| {
                    let s: f64 = r.iter().sum::<f64>() + 1e-3;
                    r.iter_mut().for_each(|x| *x /= s);
                    r[0] += 1.0 - r.iter().sum::<f64>();
                    r
                }),
                n,
            ),
            m,
        )
    }

    fn build(raw: &[Vec<Vec<f64>>]) -> Vec<LabeledScores> {
        let n = raw[0].len();
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        raw.iter()
            .map(|rows| LabeledScores::new(ids.clone(), vec![None; n], validate_score_matrix(rows).unwrap()).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn output_is_a_valid_score_matrix(raw in models(3, 5, 4), w in prop::collection::vec(0.0f64..1.0, 3)) {
            let ms = build(&raw);
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-6);
            let mut w: Vec<f64> = w.iter().map(|x| x / total).collect();
            w[0] = 1.0 - w[1] - w[2];
            prop_assume!(w[0] >= 0.0);
            let e = average_scores(&ms, Some(&w)).unwrap();
            for r in e.scores().rows() {
                prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn uniform_average_ignores_model_order(raw in models(4, 3, 5), rot in 0usize..4) {
            let ms = build(&raw);
            let mut permuted = ms.clone();
            permuted.rotate_left(rot);
            permuted.swap(0, 3);
            let a = average_scores(&ms, None).unwrap();
            let b = average_scores(&permuted, None).unwrap();
            prop_assert_eq!(a.scores(), b.scores());
        }
    }
}
