//! Tree ensembles over sparse feature rows: CART, random forest, and two
//! gradient-boosting variants (first-order with Newton leaf refits, and
//! full second-order Newton boosting).
//!
//! Decision rule at every internal node: go left iff feature value <
//! threshold. Absent sparse entries read as zero, and all features here are
//! non-negative, so absent values always route left.

mod boost;
mod cart;
mod forest;

pub use boost::{fit_gbm_first_order, fit_gbm_second_order};
pub use cart::{fit_cart, FeatureMatrix, GrowParams, SplitCriterion, MIN_GAIN};
pub use forest::fit_random_forest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::mathx::sigmoid;

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSample {
    All,
    /// ceil(sqrt(width)); the forest default.
    Sqrt,
    Count(u32),
    Fraction(f64),
}

impl FeatureSample {
    pub fn resolve(&self, width: u32) -> u32 {
        let k = match self {
            FeatureSample::All => width,
            FeatureSample::Sqrt => (width as f64).sqrt().ceil() as u32,
            FeatureSample::Count(k) => *k,
            FeatureSample::Fraction(f) => ((width as f64) * f).ceil() as u32,
        };
        k.clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFitParams {
    pub n_trees: u32,
    pub max_depth: u32,
    /// Weighted sample counts (bootstrap multiplicity included).
    pub min_samples_leaf: f64,
    pub min_samples_split: f64,
    pub features_per_split: FeatureSample,
    pub subsample: f64,
    /// Forest only: bootstrap resampling of size n with replacement.
    pub bootstrap: bool,
    pub learning_rate: f64,
    /// Second-order leaf regularizer.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TreeFitParams {
    fn default() -> Self {
        TreeFitParams {
            n_trees: 100,
            max_depth: 1000,
            min_samples_leaf: 1.0,
            min_samples_split: 2.0,
            features_per_split: FeatureSample::All,
            subsample: 1.0,
            bootstrap: true,
            learning_rate: 0.1,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl TreeFitParams {
    /// Random forest as configured in the source study: 2,000 fully grown
    /// classification trees, sqrt feature sampling.
    pub fn paper_forest(seed: u64) -> Self {
        TreeFitParams {
            n_trees: 2000,
            features_per_split: FeatureSample::Sqrt,
            ..TreeFitParams { seed, ..Default::default() }
        }
    }

    /// First-order boosting as configured in the source study: 500 trees,
    /// subsample 0.8, depth cap 50, 3 samples per leaf, learning rate 0.1,
    /// 482 candidate features per split.
    pub fn paper_gbm_first_order(seed: u64) -> Self {
        TreeFitParams {
            n_trees: 500,
            max_depth: 50,
            min_samples_leaf: 3.0,
            min_samples_split: 6.0,
            features_per_split: FeatureSample::Count(482),
            subsample: 0.8,
            bootstrap: false,
            learning_rate: 0.1,
            lambda: 0.0,
            seed,
        }
    }

    /// Second-order boosting as configured in the source study: 2,000 trees,
    /// 2 samples per leaf, learning rate 0.3.
    pub fn paper_gbm_second_order(seed: u64) -> Self {
        TreeFitParams {
            n_trees: 2000,
            max_depth: 50,
            min_samples_leaf: 2.0,
            min_samples_split: 4.0,
            features_per_split: FeatureSample::All,
            subsample: 1.0,
            bootstrap: false,
            learning_rate: 0.3,
            lambda: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 && self.max_depth == 0 {
            return Err(Error::config("n_trees and max_depth cannot both be zero"));
        }
        if self.min_samples_leaf <= 0.0 || self.min_samples_split <= 0.0 {
            return Err(Error::config("min-sample bounds must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::config("subsample must be in (0, 1]"));
        }
        if let FeatureSample::Fraction(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("feature fraction must be in (0, 1]"));
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be non-negative"));
        }
        Ok(())
    }
}

/// One tree as parallel node arrays. `feature[i] < 0` marks a leaf whose
/// prediction is `value[i]`; children always have larger indices than their
/// parent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f < 0).count()
    }

    pub fn depth(&self) -> u32 {
        fn walk(tree: &Tree, node: usize) -> u32 {
            if tree.feature[node] < 0 {
                0
            } else {
                1 + walk(tree, tree.left[node] as usize)
                    .max(walk(tree, tree.right[node] as usize))
            }
        }
        if self.n_nodes() == 0 {
            0
        } else {
            walk(self, 0)
        }
    }

    pub fn predict_row(&self, row: &SparseVector) -> f64 {
        let mut node = 0usize;
        while self.feature[node] >= 0 {
            let value = row.get(self.feature[node] as u32);
            node = if value < self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node]
    }

    /// Leaf index reached by a row (used for leaf refits).
    pub fn leaf_index(&self, row: &SparseVector) -> usize {
        let mut node = 0usize;
        while self.feature[node] >= 0 {
            let value = row.get(self.feature[node] as u32);
            node = if value < self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    /// Structural sanity for untrusted model files: consistent array
    /// lengths, in-range features, strictly forward child links (no cycles),
    /// finite leaf values.
    pub fn validate(&self, width: u32) -> Result<()> {
        let n = self.feature.len();
        if n == 0 {
            return Err(Error::data("tree with no nodes"));
        }
        if [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(Error::data("tree node arrays disagree in length"));
        }
        for i in 0..n {
            if self.feature[i] >= 0 {
                if self.feature[i] as u32 >= width {
                    return Err(Error::data(format!("node {i} splits on out-of-range feature")));
                }
                if !self.threshold[i].is_finite() {
                    return Err(Error::data(format!("node {i} has non-finite threshold")));
                }
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if l <= i || r <= i || l >= n || r >= n {
                    return Err(Error::data(format!("node {i} has invalid child links")));
                }
            } else if !self.value[i].is_finite() {
                return Err(Error::data(format!("leaf {i} has non-finite value")));
            }
        }
        Ok(())
    }
}

/// Bagged classification trees; prediction is the mean of per-tree leaf
/// probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: TreeFitParams,
    pub width: u32,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict_proba(&self, row: &SparseVector) -> Result<f64> {
        check_width(self.width, row)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        Ok(sum / self.trees.len().max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::data("forest with no trees"));
        }
        for t in &self.trees {
            t.validate(self.width)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    FirstOrder,
    SecondOrder,
}

/// Additive-margin model: margin(x) = base_score + lr * sum of tree outputs;
/// probability = sigmoid(margin).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedModel {
    pub variant: BoostVariant,
    pub params: TreeFitParams,
    pub width: u32,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Training log-loss after each round (diagnostics).
    pub train_log_loss: Vec<f64>,
    pub warning: Option<String>,
}

impl BoostedModel {
    pub fn predict_margin(&self, row: &SparseVector) -> Result<f64> {
        check_width(self.width, row)?;
        let mut margin = self.base_score;
        for tree in &self.trees {
            margin += self.params.learning_rate * tree.predict_row(row);
        }
        Ok(margin)
    }

    pub fn predict_proba(&self, row: &SparseVector) -> Result<f64> {
        Ok(sigmoid(self.predict_margin(row)?))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.base_score.is_finite() {
            return Err(Error::data("non-finite base score"));
        }
        for t in &self.trees {
            t.validate(self.width)?;
        }
        Ok(())
    }
}

fn check_width(width: u32, row: &SparseVector) -> Result<()> {
    if row.width != width {
        return Err(Error::data(format!(
            "row width {} does not match training width {width}",
            row.width
        )));
    }
    Ok(())
}

/// Versioned on-disk model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeModel {
    RandomForest(ForestModel),
    Boosted(BoostedModel),
}

impl TreeModel {
    pub fn predict_proba(&self, row: &SparseVector) -> Result<f64> {
        match self {
            TreeModel::RandomForest(m) => m.predict_proba(row),
            TreeModel::Boosted(m) => m.predict_proba(row),
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            TreeModel::RandomForest(m) => m.width,
            TreeModel::Boosted(m) => m.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TreeModel::RandomForest(m) => m.validate(),
            TreeModel::Boosted(m) => m.validate(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeModelFile {
    pub version: u32,
    pub model: TreeModel,
}

pub const TREE_MODEL_VERSION: u32 = 1;

/// Parse and structurally validate a model file from untrusted bytes.
pub fn parse_tree_model(bytes: &[u8]) -> Result<TreeModelFile> {
    let file: TreeModelFile = serde_json::from_slice(bytes)?;
    if file.version != TREE_MODEL_VERSION {
        return Err(Error::data(format!("unsupported model version {}", file.version)));
    }
    file.model.validate()?;
    Ok(file)
}
