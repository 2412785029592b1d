//! Gradient boosting on the logistic loss.
//!
//! First-order variant: trees fit to pseudo-residuals y - p under squared
//! error (equivalently a Newton criterion with unit hessians), then each
//! leaf takes one Newton step over its members. Second-order variant: full
//! Newton boosting with g = p - y, h = p(1 - p), leaf -G/(H+lambda).
//! Rounds are strictly sequential; subsampling draws a fresh seeded subset
//! per round.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mathx::{clamp_prob, log_loss, logit, sigmoid};
use crate::rng::SeedBank;
use crate::trees::cart::{grow_tree, FeatureMatrix, GrowParams, SplitCriterion};
use crate::trees::{BoostVariant, BoostedModel, Tree, TreeFitParams};

pub fn fit_gbm_first_order(
    matrix: &FeatureMatrix,
    labels: &[u8],
    params: &TreeFitParams,
) -> Result<BoostedModel> {
    fit_gbm(matrix, labels, params, BoostVariant::FirstOrder)
}

pub fn fit_gbm_second_order(
    matrix: &FeatureMatrix,
    labels: &[u8],
    params: &TreeFitParams,
) -> Result<BoostedModel> {
    fit_gbm(matrix, labels, params, BoostVariant::SecondOrder)
}

fn fit_gbm(
    matrix: &FeatureMatrix,
    labels: &[u8],
    params: &TreeFitParams,
    variant: BoostVariant,
) -> Result<BoostedModel> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 {
        return Err(Error::data("cannot boost on an empty training set"));
    }
    if labels.len() != n {
        return Err(Error::data("labels do not match row count"));
    }

    let positives = labels.iter().filter(|&&y| y == 1).count();
    let prevalence = positives as f64 / n as f64;
    let base_score = logit(clamp_prob(prevalence));
    let mut model = BoostedModel {
        variant,
        params: params.clone(),
        width: matrix.width,
        base_score,
        trees: Vec::new(),
        train_log_loss: Vec::new(),
        warning: None,
    };
    if positives == 0 || positives == n {
        model.warning = Some("degenerate labels: single class, returning base score only".into());
        return Ok(model);
    }

    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        min_samples_split: params.min_samples_split,
        features_per_split: params.features_per_split,
    };
    let bank = SeedBank::new(params.seed);
    let unit_hess = vec![1.0f64; n];
    let mut margins = vec![base_score; n];
    let mut probs = vec![0.0f64; n];
    let mut grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];

    for round in 0..params.n_trees {
        for i in 0..n {
            probs[i] = clamp_prob(sigmoid(margins[i]));
        }
        for i in 0..n {
            grad[i] = probs[i] - labels[i] as f64;
            hess[i] = probs[i] * (1.0 - probs[i]);
        }

        let mut stream = bank.stream_indexed("gbm-round", round as u64);
        let weights = if params.subsample < 1.0 {
            let k = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut w = vec![0.0f64; n];
            for i in stream.sample_distinct(n, k) {
                w[i as usize] = 1.0;
            }
            w
        } else {
            vec![1.0f64; n]
        };

        let tree = match variant {
            BoostVariant::SecondOrder => grow_tree(
                matrix,
                &weights,
                &SplitCriterion::Newton { grad: &grad, hess: &hess, lambda: params.lambda },
                &grow,
                &mut stream,
            )?,
            BoostVariant::FirstOrder => {
                // structure from squared error against the pseudo-residuals
                let tree = grow_tree(
                    matrix,
                    &weights,
                    &SplitCriterion::Newton { grad: &grad, hess: &unit_hess, lambda: 0.0 },
                    &grow,
                    &mut stream,
                )?;
                refit_leaves_newton(tree, matrix, &weights, &grad, &hess)
            }
        };

        if tree.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite leaf value at round {round}")));
        }
        for i in 0..n {
            margins[i] += params.learning_rate * tree.predict_row(&matrix.rows[i]);
        }
        model.trees.push(tree);

        for i in 0..n {
            probs[i] = sigmoid(margins[i]);
        }
        model.train_log_loss.push(log_loss(&probs, labels));
    }
    Ok(model)
}

/// One Newton step per leaf over the leaf's (subsampled) members:
/// value = -sum(p - y) / sum(p(1-p)).
fn refit_leaves_newton(
    mut tree: Tree,
    matrix: &FeatureMatrix,
    weights: &[f64],
    grad: &[f64],
    hess: &[f64],
) -> Tree {
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (i, row) in matrix.rows.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        let leaf = tree.leaf_index(row);
        let entry = sums.entry(leaf).or_insert((0.0, 0.0));
        entry.0 += weights[i] * grad[i];
        entry.1 += weights[i] * hess[i];
    }
    for (leaf, (g, h)) in sums {
        tree.value[leaf] = if h > 0.0 { -g / h } else { 0.0 };
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SparseVector;
    use crate::rng::SeedBank;
    use crate::trees::FeatureSample;

    fn toy() -> (FeatureMatrix, Vec<u8>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut stream = SeedBank::new(21).stream("gbm-toy");
        for _ in 0..80 {
            let x = stream.unit() * 2.0;
            let y = stream.unit() * 2.0;
            rows.push(SparseVector { width: 2, entries: vec![(0, x), (1, y)] });
            labels.push((x > y) as u8);
        }
        (FeatureMatrix::new(rows).unwrap(), labels)
    }

    fn params(n_trees: u32, lr: f64) -> TreeFitParams {
        TreeFitParams {
            n_trees,
            max_depth: 3,
            min_samples_leaf: 1.0,
            min_samples_split: 2.0,
            features_per_split: FeatureSample::All,
            subsample: 1.0,
            bootstrap: false,
            learning_rate: lr,
            lambda: 0.0,
            seed: 2,
        }
    }

    #[test]
    fn zero_rounds_predicts_prevalence() {
        let (matrix, labels) = toy();
        let model = fit_gbm_first_order(&matrix, &labels, &params(0, 0.1)).unwrap();
        let prevalence = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
        let p = model.predict_proba(&matrix.rows[0]).unwrap();
        assert!((p - prevalence).abs() < 1e-12);
    }

    #[test]
    fn first_round_leaves_are_newton_steps_on_residuals() {
        let matrix = FeatureMatrix::new(vec![
            SparseVector { width: 1, entries: vec![] },
            SparseVector { width: 1, entries: vec![(0, 1.0)] },
        ])
        .unwrap();
        let labels = [0u8, 1u8];
        let model = fit_gbm_first_order(&matrix, &labels, &params(1, 0.1)).unwrap();
        // base = logit(0.5) = 0; residuals y - p = -+0.5; h = 0.25 -> leaves -+2
        assert_eq!(model.base_score, 0.0);
        let m1 = model.predict_margin(&matrix.rows[1]).unwrap();
        assert!((m1 - 0.1 * 2.0).abs() < 1e-12);
        let m0 = model.predict_margin(&matrix.rows[0]).unwrap();
        assert!((m0 + 0.1 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn second_order_single_leaf_step() {
        // {y=1, p=0.5}, lambda=0 -> leaf 2.0, margin step lr * 2.0
        let matrix = FeatureMatrix::new(vec![
            SparseVector { width: 1, entries: vec![] },
            SparseVector { width: 1, entries: vec![(0, 3.0)] },
        ])
        .unwrap();
        let labels = [0u8, 1u8];
        let mut p = params(1, 0.3);
        p.lambda = 0.0;
        let model = fit_gbm_second_order(&matrix, &labels, &p).unwrap();
        let m = model.predict_margin(&matrix.rows[1]).unwrap();
        assert!((m - 0.3 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_freezes_model_at_base_score() {
        let (matrix, labels) = toy();
        let mut p = params(5, 0.3);
        p.lambda = 1e12;
        let model = fit_gbm_second_order(&matrix, &labels, &p).unwrap();
        let prevalence = labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
        for row in &matrix.rows {
            assert!((model.predict_proba(row).unwrap() - prevalence).abs() < 1e-6);
        }
    }

    #[test]
    fn training_loss_decreases_on_separable_data() {
        let (matrix, labels) = toy();
        for model in [
            fit_gbm_first_order(&matrix, &labels, &params(10, 0.1)).unwrap(),
            fit_gbm_second_order(&matrix, &labels, &params(10, 0.3)).unwrap(),
        ] {
            let losses = &model.train_log_loss;
            assert_eq!(losses.len(), 10);
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "loss increased: {:?}", losses);
            }
            assert!(losses[9] < losses[0]);
        }
    }

    #[test]
    fn single_class_labels_return_base_only_with_warning() {
        let (matrix, _) = toy();
        let labels = vec![1u8; matrix.n_rows()];
        let model = fit_gbm_first_order(&matrix, &labels, &params(5, 0.1)).unwrap();
        assert!(model.trees.is_empty());
        assert!(model.warning.is_some());
        assert!(model.predict_proba(&matrix.rows[0]).unwrap() > 0.99);
    }

    #[test]
    fn monotone_tree_addition_never_lowers_probability() {
        let (matrix, labels) = toy();
        let m5 = fit_gbm_second_order(&matrix, &labels, &params(5, 0.3)).unwrap();
        let mut m6 = m5.clone();
        // a hand-built all-positive stump
        m6.trees.push(Tree {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![0.4],
        });
        for row in &matrix.rows {
            assert!(m6.predict_proba(row).unwrap() >= m5.predict_proba(row).unwrap());
        }
    }

    #[test]
    fn empty_ensemble_probability_is_sigmoid_base() {
        let (matrix, labels) = toy();
        let model = fit_gbm_second_order(&matrix, &labels, &params(0, 0.3)).unwrap();
        let p = model.predict_proba(&matrix.rows[3]).unwrap();
        assert!((p - sigmoid(model.base_score)).abs() < 1e-15);
    }
}
