//! Discrimination and calibration metrics: ROC/AUROC, interpolated
//! precision-recall, Brier score, reliability table, per-group reports.
//!
//! Classification rule everywhere: predict positive iff `score >= threshold`.
//! Tied scores collapse into a single ROC step, which makes the trapezoidal
//! AUROC equal pairwise concordance with ties counted 1/2.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores, binary labels, and an optional group token per example.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Option<Vec<String>>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        Self::with_groups(scores, labels, None)
    }

    pub fn with_groups(
        scores: Vec<f64>,
        labels: Vec<u8>,
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::data(format!(
                "scores/labels length mismatch: {} vs {}",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(g) = &groups {
            if g.len() != scores.len() {
                return Err(Error::data("groups length mismatch".to_string()));
            }
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::data("non-finite score".to_string()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::data("labels must be 0 or 1".to_string()));
        }
        Ok(ScoredSet { scores, labels, groups })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }

    pub fn prevalence(&self) -> f64 {
        if self.is_empty() {
            return f64::NAN;
        }
        self.positives() as f64 / self.len() as f64
    }
}

/// One ROC operating point. `threshold` may be +/- infinity at the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points with strictly decreasing thresholds, starting at
/// (+inf -> (0,0)) and ending at (-inf -> (1,1)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc_points(set: &ScoredSet) -> Result<RocCurve> {
    let n_pos = set.positives();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::Metric("no positive examples".into()));
    }
    if n_neg == 0 {
        return Err(Error::Metric("no negative examples".into()));
    }

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.scores[b].partial_cmp(&set.scores[a]).expect("finite scores").then(a.cmp(&b))
    });

    let mut points = Vec::with_capacity(set.len() + 2);
    points.push(RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 });

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = set.scores[order[i]];
        // fold the whole tie group into one step
        while i < order.len() && set.scores[order[i]] == score {
            if set.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    points.push(RocPoint { threshold: f64::NEG_INFINITY, fpr: 1.0, tpr: 1.0 });
    Ok(RocCurve { points })
}

/// Trapezoidal area under the ROC curve.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let curve = roc_points(set)?;
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].fpr - pair[0].fpr) * (pair[0].tpr + pair[1].tpr) / 2.0;
    }
    Ok(area)
}

/// One precision-recall operating point (threshold-descending order).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

pub fn pr_points(set: &ScoredSet) -> Result<Vec<PrPoint>> {
    let n_pos = set.positives();
    if n_pos == 0 {
        return Err(Error::Metric("no positive examples".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.scores[b].partial_cmp(&set.scores[a]).expect("finite scores").then(a.cmp(&b))
    });

    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut predicted = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == score {
            tp += set.labels[order[i]] as u64;
            predicted += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: score,
            recall: tp as f64 / n_pos as f64,
            precision: tp as f64 / predicted as f64,
        });
    }
    Ok(points)
}

/// Area under the interpolated precision-recall curve:
/// p_interp(r) = max precision over operating points with recall >= r,
/// integrated stepwise over the distinct recall levels.
pub fn auprc_interpolated(set: &ScoredSet) -> Result<f64> {
    let points = pr_points(set)?;
    // suffix max of precision in threshold-descending (recall-ascending) order
    let mut interp = vec![0.0; points.len()];
    let mut best = 0.0f64;
    for (k, p) in points.iter().enumerate().rev() {
        best = best.max(p.precision);
        interp[k] = best;
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (k, p) in points.iter().enumerate() {
        if p.recall > prev_recall {
            area += (p.recall - prev_recall) * interp[k];
            prev_recall = p.recall;
        }
    }
    Ok(area)
}

/// Uninterpolated average precision, emitted alongside for reference.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let points = pr_points(set)?;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(area)
}

/// Mean squared difference between score and label.
pub fn brier(set: &ScoredSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Metric("empty scored set".into()));
    }
    let sum: f64 = set
        .scores
        .iter()
        .zip(&set.labels)
        .map(|(&s, &l)| (s - l as f64) * (s - l as f64))
        .sum();
    Ok(sum / set.len() as f64)
}

/// One reliability-table bin over predicted probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Undefined (None) for empty bins.
    pub mean_predicted: Option<f64>,
    pub fraction_positive: Option<f64>,
}

/// Equal-width bins on [0,1]; the last bin is right-closed.
pub fn calibration_table(set: &ScoredSet, n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if set.is_empty() {
        return Err(Error::Metric("empty scored set".into()));
    }
    if n_bins == 0 {
        return Err(Error::data("n_bins must be >= 1"));
    }
    let mut count = vec![0usize; n_bins];
    let mut sum_pred = vec![0.0f64; n_bins];
    let mut sum_pos = vec![0.0f64; n_bins];
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        let mut b = (s * n_bins as f64).floor() as isize;
        b = b.clamp(0, n_bins as isize - 1);
        let b = b as usize;
        count[b] += 1;
        sum_pred[b] += s;
        sum_pos[b] += l as f64;
    }
    Ok((0..n_bins)
        .map(|b| CalibrationBin {
            lo: b as f64 / n_bins as f64,
            hi: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            mean_predicted: (count[b] > 0).then(|| sum_pred[b] / count[b] as f64),
            fraction_positive: (count[b] > 0).then(|| sum_pos[b] / count[b] as f64),
        })
        .collect())
}

/// Per-group discrimination report. Groups below `min_size` or with a single
/// class get `None` metrics rather than a number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub prevalence: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

pub const DEFAULT_MIN_GROUP_SIZE: usize = 50;

pub fn metrics_by_group(set: &ScoredSet, min_size: usize) -> Result<BTreeMap<String, GroupMetrics>> {
    let groups = set
        .groups
        .as_ref()
        .ok_or_else(|| Error::data("scored set carries no group tokens"))?;
    let mut index: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        index.entry(g.as_str()).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (name, rows) in index {
        let scores: Vec<f64> = rows.iter().map(|&i| set.scores[i]).collect();
        let labels: Vec<u8> = rows.iter().map(|&i| set.labels[i]).collect();
        let subset = ScoredSet::new(scores, labels)?;
        let n_pos = subset.positives();
        let defined = subset.len() >= min_size && n_pos > 0 && n_pos < subset.len();
        out.insert(
            name.to_string(),
            GroupMetrics {
                n: subset.len(),
                prevalence: subset.prevalence(),
                auroc: if defined { Some(auroc(&subset)?) } else { None },
                auprc: if defined { Some(auprc_interpolated(&subset)?) } else { None },
            },
        );
    }
    Ok(out)
}
