//! Exact greedy CART growing over sparse columns, level by level.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values within a node (zero counts as a value whenever the node has rows
//! with no entry for the feature). Right-side statistics accumulate in
//! descending (value, row) order; left = node totals - right, and node
//! totals accumulate in ascending row order. Tie-break: higher gain, then
//! lowest feature index, then lowest threshold. These orderings are part of
//! the determinism contract and are mirrored by the enumeration oracle in
//! the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::rng::Stream;
use crate::trees::{FeatureSample, Tree};

/// Gains at or below this are treated as no improvement.
pub const MIN_GAIN: f64 = 1e-12;

const INACTIVE: u32 = u32::MAX;

/// Row-major sparse rows plus per-column entry lists pre-sorted by
/// descending (value, row). Built once and shared by every tree.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub width: u32,
    pub rows: Vec<SparseVector>,
    columns: Vec<Vec<(f64, u32)>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<SparseVector>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.width);
        let mut columns: Vec<Vec<(f64, u32)>> = vec![Vec::new(); width as usize];
        for (i, row) in rows.iter().enumerate() {
            if row.width != width {
                return Err(Error::data("rows disagree in width"));
            }
            for &(col, value) in &row.entries {
                if value < 0.0 {
                    return Err(Error::data(format!(
                        "negative feature value {value} in column {col}; counts and flags must be non-negative"
                    )));
                }
                columns[col as usize].push((value, i as u32));
            }
        }
        for col in &mut columns {
            col.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        }
        Ok(FeatureMatrix { width, rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, f: u32) -> &[(f64, u32)] {
        &self.columns[f as usize]
    }
}

/// Split objective. Gini grows classification trees with
/// positive-fraction leaves; Newton grows regression trees with
/// leaf = -G/(H+lambda) and gain 0.5*(GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)).
#[derive(Debug, Clone, Copy)]
pub enum SplitCriterion<'a> {
    Gini { labels: &'a [u8] },
    Newton { grad: &'a [f64], hess: &'a [f64], lambda: f64 },
}

impl SplitCriterion<'_> {
    #[inline]
    fn contribution(&self, row: usize, weight: f64) -> (f64, f64, f64) {
        match self {
            SplitCriterion::Gini { labels } => (weight, weight * labels[row] as f64, 0.0),
            SplitCriterion::Newton { grad, hess, .. } => {
                (weight, weight * grad[row], weight * hess[row])
            }
        }
    }

    fn check_lengths(&self, n: usize) -> Result<()> {
        let ok = match self {
            SplitCriterion::Gini { labels } => labels.len() == n,
            SplitCriterion::Newton { grad, hess, .. } => grad.len() == n && hess.len() == n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::data("target arrays do not match row count"))
        }
    }

    fn leaf_value(&self, totals: Totals) -> f64 {
        match self {
            SplitCriterion::Gini { .. } => {
                if totals.w > 0.0 {
                    totals.a / totals.w
                } else {
                    0.0
                }
            }
            SplitCriterion::Newton { lambda, .. } => {
                let denom = totals.b + lambda;
                if denom > 0.0 {
                    -totals.a / denom
                } else {
                    0.0
                }
            }
        }
    }

    fn gain(&self, parent: Totals, left: Totals, right: Totals) -> f64 {
        match self {
            SplitCriterion::Gini { .. } => {
                gini_score(parent) - gini_score(left) - gini_score(right)
            }
            SplitCriterion::Newton { lambda, .. } => {
                0.5 * (newton_score(left, *lambda) + newton_score(right, *lambda)
                    - newton_score(parent, *lambda))
            }
        }
    }

    fn is_pure(&self, totals: Totals) -> bool {
        match self {
            SplitCriterion::Gini { .. } => totals.a == 0.0 || totals.a == totals.w,
            SplitCriterion::Newton { .. } => false,
        }
    }
}

/// Weighted Gini mass 2*pos*(w-pos)/w; impurity decrease is the drop in
/// this quantity, so no per-candidate division by the parent weight.
#[inline]
fn gini_score(t: Totals) -> f64 {
    if t.w > 0.0 {
        2.0 * t.a * (t.w - t.a) / t.w
    } else {
        0.0
    }
}

#[inline]
fn newton_score(t: Totals, lambda: f64) -> f64 {
    let denom = t.b + lambda;
    if denom > 0.0 {
        t.a * t.a / denom
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Totals {
    w: f64,
    a: f64,
    b: f64,
}

impl Totals {
    #[inline]
    fn add(&mut self, c: (f64, f64, f64)) {
        self.w += c.0;
        self.a += c.1;
        self.b += c.2;
    }

    #[inline]
    fn minus(&self, other: Totals) -> Totals {
        Totals { w: self.w - other.w, a: self.a - other.a, b: self.b - other.b }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: u32,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowParams {
    pub max_depth: u32,
    pub min_samples_leaf: f64,
    pub min_samples_split: f64,
    pub features_per_split: FeatureSample,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            max_depth: 1000,
            min_samples_leaf: 1.0,
            min_samples_split: 2.0,
            features_per_split: FeatureSample::All,
        }
    }
}

struct LevelNode {
    tree_index: u32,
    depth: u32,
    totals: Totals,
    features: Option<Vec<u32>>,
    best: Option<Candidate>,
}

#[derive(Clone, Copy, Default)]
struct ColState {
    epoch: u32,
    started: bool,
    prev_value: f64,
    acc: Totals,
}

/// Grow one tree. `weights` has one entry per dataset row; zero-weight rows
/// are excluded. Single-threaded and deterministic given the stream.
pub fn grow_tree(
    matrix: &FeatureMatrix,
    weights: &[f64],
    criterion: &SplitCriterion,
    params: &GrowParams,
    stream: &mut Stream,
) -> Result<Tree> {
    let n = matrix.n_rows();
    if weights.len() != n {
        return Err(Error::data("weights do not match row count"));
    }
    criterion.check_lengths(n)?;

    let mut tree = Tree::default();
    tree.feature.push(-1);
    tree.threshold.push(0.0);
    tree.left.push(0);
    tree.right.push(0);
    tree.value.push(0.0);

    // root totals in ascending row order
    let mut node_of: Vec<u32> = vec![INACTIVE; n];
    let mut root = Totals::default();
    let mut active = 0usize;
    for row in 0..n {
        if weights[row] > 0.0 {
            node_of[row] = 0;
            root.add(criterion.contribution(row, weights[row]));
            active += 1;
        }
    }
    if active == 0 {
        return Err(Error::data("cannot fit a tree on zero rows"));
    }

    let mut level = vec![LevelNode {
        tree_index: 0,
        depth: 0,
        totals: root,
        features: None,
        best: None,
    }];
    let mut right_mark = vec![false; n];
    let k_features = params.features_per_split.resolve(matrix.width);

    while !level.is_empty() {
        // decide which nodes may split; sample their feature subsets in slot order
        let mut splittable = vec![false; level.len()];
        for (slot, node) in level.iter_mut().enumerate() {
            let can = node.depth < params.max_depth
                && node.totals.w >= params.min_samples_split
                && !criterion.is_pure(node.totals);
            splittable[slot] = can;
            if can && k_features < matrix.width {
                node.features =
                    Some(stream.sample_distinct(matrix.width as usize, k_features as usize));
            }
        }

        // scan each column once, accumulating right-side stats per node
        let mut state = vec![ColState::default(); level.len()];
        let mut touched: Vec<u32> = Vec::new();
        for f in 0..matrix.width {
            let col = matrix.column(f);
            if col.is_empty() {
                continue;
            }
            touched.clear();
            for &(value, row) in col {
                let slot = node_of[row as usize];
                if slot == INACTIVE || !splittable[slot as usize] {
                    continue;
                }
                if let Some(fs) = &level[slot as usize].features {
                    if fs.binary_search(&f).is_err() {
                        continue;
                    }
                }
                let (started, prev_value, acc) = {
                    let st = &mut state[slot as usize];
                    if st.epoch != f + 1 {
                        *st = ColState { epoch: f + 1, ..ColState::default() };
                        touched.push(slot);
                    }
                    (st.started, st.prev_value, st.acc)
                };
                if started && value < prev_value {
                    let t = 0.5 * (value + prev_value);
                    if t > value {
                        consider(&mut level[slot as usize], criterion, params, f, t, acc);
                    }
                }
                let st = &mut state[slot as usize];
                st.acc.add(criterion.contribution(row as usize, weights[row as usize]));
                st.prev_value = value;
                st.started = true;
            }
            // zero block: rows of the node absent from this column
            for &slot in &touched {
                let st = state[slot as usize];
                let parent_w = level[slot as usize].totals.w;
                if st.acc.w > 0.0 && parent_w - st.acc.w > 0.0 {
                    let t = 0.5 * st.prev_value;
                    if t > 0.0 {
                        consider(&mut level[slot as usize], criterion, params, f, t, st.acc);
                    }
                }
            }
        }

        // materialize splits and leaves
        struct SplitPlan {
            feature: u32,
            threshold: f64,
            left_slot: u32,
            right_slot: u32,
        }
        let mut plans: Vec<Option<SplitPlan>> = Vec::with_capacity(level.len());
        let mut next_level: Vec<LevelNode> = Vec::new();
        for node in &level {
            match node.best {
                Some(cand) => {
                    let left_id = tree.feature.len() as u32;
                    for _ in 0..2 {
                        tree.feature.push(-1);
                        tree.threshold.push(0.0);
                        tree.left.push(0);
                        tree.right.push(0);
                        tree.value.push(0.0);
                    }
                    let idx = node.tree_index as usize;
                    tree.feature[idx] = cand.feature as i32;
                    tree.threshold[idx] = cand.threshold;
                    tree.left[idx] = left_id;
                    tree.right[idx] = left_id + 1;
                    let left_slot = next_level.len() as u32;
                    next_level.push(LevelNode {
                        tree_index: left_id,
                        depth: node.depth + 1,
                        totals: Totals::default(),
                        features: None,
                        best: None,
                    });
                    next_level.push(LevelNode {
                        tree_index: left_id + 1,
                        depth: node.depth + 1,
                        totals: Totals::default(),
                        features: None,
                        best: None,
                    });
                    plans.push(Some(SplitPlan {
                        feature: cand.feature,
                        threshold: cand.threshold,
                        left_slot,
                        right_slot: left_slot + 1,
                    }));
                }
                None => {
                    tree.value[node.tree_index as usize] = criterion.leaf_value(node.totals);
                    plans.push(None);
                }
            }
        }

        if next_level.is_empty() {
            break;
        }

        // mark rows routed right (value >= threshold); unmarked rows go left,
        // including every zero entry
        let mut split_features: Vec<u32> =
            plans.iter().flatten().map(|p| p.feature).collect();
        split_features.sort_unstable();
        split_features.dedup();
        for &f in &split_features {
            for &(value, row) in matrix.column(f) {
                let slot = node_of[row as usize];
                if slot == INACTIVE {
                    continue;
                }
                if let Some(plan) = &plans[slot as usize] {
                    if plan.feature == f && value >= plan.threshold {
                        right_mark[row as usize] = true;
                    }
                }
            }
        }

        // reassign rows in ascending row order; child totals accumulate here
        for row in 0..n {
            let slot = node_of[row];
            if slot == INACTIVE {
                continue;
            }
            match &plans[slot as usize] {
                None => node_of[row] = INACTIVE,
                Some(plan) => {
                    let child =
                        if right_mark[row] { plan.right_slot } else { plan.left_slot };
                    node_of[row] = child;
                    next_level[child as usize]
                        .totals
                        .add(criterion.contribution(row, weights[row]));
                    right_mark[row] = false;
                }
            }
        }
        level = next_level;
    }
    Ok(tree)
}

fn consider(
    node: &mut LevelNode,
    criterion: &SplitCriterion,
    params: &GrowParams,
    feature: u32,
    threshold: f64,
    right: Totals,
) {
    let left = node.totals.minus(right);
    if left.w < params.min_samples_leaf || right.w < params.min_samples_leaf {
        return;
    }
    let gain = criterion.gain(node.totals, left, right);
    if gain <= MIN_GAIN {
        return;
    }
    let better = match node.best {
        None => true,
        Some(b) => {
            gain > b.gain
                || (gain == b.gain && feature == b.feature && threshold < b.threshold)
        }
    };
    if better {
        node.best = Some(Candidate { gain, feature, threshold });
    }
}

/// Fit one tree on all rows with unit weights.
pub fn fit_cart(
    matrix: &FeatureMatrix,
    criterion: &SplitCriterion,
    params: &GrowParams,
    stream: &mut Stream,
) -> Result<Tree> {
    grow_tree(matrix, &vec![1.0; matrix.n_rows()], criterion, params, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedBank;

    fn row(width: u32, entries: &[(u32, f64)]) -> SparseVector {
        SparseVector { width, entries: entries.to_vec() }
    }

    fn stream() -> Stream {
        SeedBank::new(3).stream("cart-test")
    }

    #[test]
    fn perfect_separation_gives_depth_one_tree() {
        let matrix = FeatureMatrix::new(vec![
            row(2, &[(0, 1.0)]),
            row(2, &[(0, 2.0)]),
            row(2, &[]),
            row(2, &[(1, 5.0)]),
        ])
        .unwrap();
        let labels = [1, 1, 0, 0];
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &GrowParams::default(),
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.feature[0], 0);
        let mut leaves: Vec<f64> =
            (0..tree.n_nodes()).filter(|&i| tree.feature[i] < 0).map(|i| tree.value[i]).collect();
        leaves.sort_by(f64::total_cmp);
        assert_eq!(leaves, vec![0.0, 1.0]);
        assert_eq!(tree.predict_row(&row(2, &[(0, 1.5)])), 1.0);
        assert_eq!(tree.predict_row(&row(2, &[(1, 5.0)])), 0.0);
    }

    #[test]
    fn pure_node_is_immediate_leaf() {
        let matrix =
            FeatureMatrix::new(vec![row(1, &[(0, 1.0)]), row(1, &[(0, 2.0)])]).unwrap();
        let labels = [1, 1];
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &GrowParams::default(),
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.value[0], 1.0);
    }

    #[test]
    fn newton_single_sample_leaf_is_hand_newton_step() {
        // y=1 at p=0.5: g=-0.5, h=0.25, lambda=0 -> leaf 2.0
        let matrix = FeatureMatrix::new(vec![row(1, &[])]).unwrap();
        let grad = [-0.5];
        let hess = [0.25];
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Newton { grad: &grad, hess: &hess, lambda: 0.0 },
            &GrowParams::default(),
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.n_nodes(), 1);
        assert!((tree.value[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_features_yield_root_leaf() {
        let matrix =
            FeatureMatrix::new(vec![row(2, &[(0, 3.0)]), row(2, &[(0, 3.0)])]).unwrap();
        let labels = [0, 1];
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &GrowParams::default(),
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.value[0], 0.5);
    }

    #[test]
    fn zero_rows_is_an_error() {
        let matrix = FeatureMatrix::new(vec![row(1, &[]), row(1, &[])]).unwrap();
        let labels = [0, 1];
        let err = grow_tree(
            &matrix,
            &[0.0, 0.0],
            &SplitCriterion::Gini { labels: &labels },
            &GrowParams::default(),
            &mut stream(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_block_split_routes_absent_left() {
        // feature present on positives only; absent (zero) rows go left
        let matrix = FeatureMatrix::new(vec![
            row(1, &[]),
            row(1, &[]),
            row(1, &[(0, 2.0)]),
            row(1, &[(0, 4.0)]),
        ])
        .unwrap();
        let labels = [0, 0, 1, 1];
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &GrowParams::default(),
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.threshold[0], 1.0); // midpoint of 0 and 2
        assert_eq!(tree.predict_row(&row(1, &[])), 0.0);
        assert_eq!(tree.predict_row(&row(1, &[(0, 3.0)])), 1.0);
    }

    #[test]
    fn max_depth_zero_means_root_leaf() {
        let matrix =
            FeatureMatrix::new(vec![row(1, &[(0, 1.0)]), row(1, &[])]).unwrap();
        let labels = [1, 0];
        let params = GrowParams { max_depth: 0, ..GrowParams::default() };
        let tree = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &params,
            &mut stream(),
        )
        .unwrap();
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.value[0], 0.5);
    }

    #[test]
    fn deterministic_given_stream_seed() {
        let rows: Vec<SparseVector> = (0..40)
            .map(|i| row(3, &[(i % 3, (i % 7) as f64 + 1.0)]))
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let matrix = FeatureMatrix::new(rows).unwrap();
        let params = GrowParams {
            features_per_split: FeatureSample::Count(2),
            ..GrowParams::default()
        };
        let t1 = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &params,
            &mut SeedBank::new(9).stream("t"),
        )
        .unwrap();
        let t2 = fit_cart(
            &matrix,
            &SplitCriterion::Gini { labels: &labels },
            &params,
            &mut SeedBank::new(9).stream("t"),
        )
        .unwrap();
        assert_eq!(t1, t2);
    }
}
