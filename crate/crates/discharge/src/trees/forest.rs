//! Random forest: gini trees on bootstrap resamples, trained in parallel
//! with one substream per tree index so output is thread-count independent.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeedBank;
use crate::trees::cart::{grow_tree, FeatureMatrix, GrowParams, SplitCriterion};
use crate::trees::{ForestModel, Tree, TreeFitParams};

pub fn fit_random_forest(
    matrix: &FeatureMatrix,
    labels: &[u8],
    params: &TreeFitParams,
) -> Result<ForestModel> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 {
        return Err(Error::data("cannot fit a forest on an empty training set"));
    }
    if labels.len() != n {
        return Err(Error::data("labels do not match row count"));
    }
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        min_samples_split: params.min_samples_split,
        features_per_split: params.features_per_split,
    };
    let bank = SeedBank::new(params.seed);
    let trees: Result<Vec<Tree>> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut stream = bank.stream_indexed("forest-tree", t as u64);
            let mut weights = vec![0.0f64; n];
            if params.bootstrap {
                for _ in 0..n {
                    weights[stream.below(n as u64) as usize] += 1.0;
                }
            } else {
                weights.fill(1.0);
            }
            grow_tree(matrix, &weights, &SplitCriterion::Gini { labels }, &grow, &mut stream)
        })
        .collect();
    Ok(ForestModel { params: params.clone(), width: matrix.width, trees: trees? })
}
