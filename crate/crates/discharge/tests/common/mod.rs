//! Shared independent oracles for the integration and acceptance suites.
//! These deliberately re-derive expected values through a different route
//! than the library implementation.

#![allow(dead_code)]

use discharge::features::{DaySequence, SeqStep, SparseVector, CHANNELS};
use discharge::gru::{batch_loss, loss_and_grads, DropoutMode, GruParameters, Task};
use discharge::rng::Stream;
use discharge::timeutil::DAY_SECS;

/// Pairwise concordance AUROC: P(score_pos > score_neg) + 1/2 P(tie),
/// O(n^2) over all (positive, negative) pairs.
pub fn auroc_concordance(scores: &[f64], labels: &[u8]) -> f64 {
    let mut concordant = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if li != 1 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if lj != 0 || i == j {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

/// Brute-force interpolated AUPRC: for every distinct recall level r
/// (ascending, starting from 0), take the maximum precision over all
/// thresholds whose recall is >= r, and integrate stepwise.
pub fn auprc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    assert!(n_pos > 0);
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // operating point per threshold (predict positive iff score >= t)
    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.sort_by(f64::total_cmp);
    recalls.dedup();

    let mut area = 0.0;
    let mut prev_r = 0.0;
    for &r in &recalls {
        if r <= prev_r {
            continue;
        }
        let p_interp = points
            .iter()
            .filter(|(pr, _)| *pr >= r)
            .map(|(_, pp)| *pp)
            .fold(0.0f64, f64::max);
        area += (r - prev_r) * p_interp;
        prev_r = r;
    }
    area
}

/// Exhaustive split enumeration mirroring the documented determinism
/// contract: right-side statistics accumulate in descending (value, row)
/// order, left = totals - right, candidate thresholds are midpoints between
/// consecutive distinct values within the node (zero included when rows lack
/// the feature), tie-break lowest feature then lowest threshold.
pub struct OracleSplit {
    pub feature: u32,
    pub threshold: f64,
    pub gain: f64,
}

pub enum OracleCriterion<'a> {
    Gini { labels: &'a [u8] },
    Newton { grad: &'a [f64], hess: &'a [f64], lambda: f64 },
}

pub fn enumerate_best_split(
    rows: &[SparseVector],
    weights: &[f64],
    criterion: &OracleCriterion,
    min_samples_leaf: f64,
    min_gain: f64,
) -> Option<OracleSplit> {
    let width = rows.first().map(|r| r.width).unwrap_or(0);
    let contribution = |row: usize| -> (f64, f64, f64) {
        let w = weights[row];
        match criterion {
            OracleCriterion::Gini { labels } => (w, w * labels[row] as f64, 0.0),
            OracleCriterion::Newton { grad, hess, .. } => (w, w * grad[row], w * hess[row]),
        }
    };
    let score = |w: f64, a: f64, b: f64| -> f64 {
        match criterion {
            OracleCriterion::Gini { .. } => {
                if w > 0.0 {
                    2.0 * a * (w - a) / w
                } else {
                    0.0
                }
            }
            OracleCriterion::Newton { lambda, .. } => {
                if b + lambda > 0.0 {
                    a * a / (b + lambda)
                } else {
                    0.0
                }
            }
        }
    };
    let gain_of = |tot: (f64, f64, f64), left: (f64, f64, f64), right: (f64, f64, f64)| -> f64 {
        match criterion {
            OracleCriterion::Gini { .. } => {
                score(tot.0, tot.1, tot.2) - score(left.0, left.1, left.2)
                    - score(right.0, right.1, right.2)
            }
            OracleCriterion::Newton { .. } => {
                0.5 * (score(left.0, left.1, left.2) + score(right.0, right.1, right.2)
                    - score(tot.0, tot.1, tot.2))
            }
        }
    };

    // node totals in ascending row order
    let mut totals = (0.0, 0.0, 0.0);
    for row in 0..rows.len() {
        if weights[row] > 0.0 {
            let c = contribution(row);
            totals = (totals.0 + c.0, totals.1 + c.1, totals.2 + c.2);
        }
    }

    let mut best: Option<OracleSplit> = None;
    for f in 0..width {
        // active (value, row) entries, descending
        let mut entries: Vec<(f64, u32)> = Vec::new();
        for (row, r) in rows.iter().enumerate() {
            if weights[row] > 0.0 {
                let v = r.get(f);
                if v != 0.0 {
                    entries.push((v, row as u32));
                }
            }
        }
        entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        if entries.is_empty() {
            continue;
        }
        let mut acc = (0.0, 0.0, 0.0);
        let mut prev_value = f64::NAN;
        let mut candidates: Vec<(f64, (f64, f64, f64))> = Vec::new();
        for &(value, row) in &entries {
            if !prev_value.is_nan() && value < prev_value {
                let t = 0.5 * (value + prev_value);
                if t > value {
                    candidates.push((t, acc));
                }
            }
            let c = contribution(row as usize);
            acc = (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2);
            prev_value = value;
        }
        if totals.0 - acc.0 > 0.0 {
            let t = 0.5 * prev_value;
            if t > 0.0 {
                candidates.push((t, acc));
            }
        }
        for (t, right) in candidates {
            let left = (totals.0 - right.0, totals.1 - right.1, totals.2 - right.2);
            if left.0 < min_samples_leaf || right.0 < min_samples_leaf {
                continue;
            }
            let gain = gain_of(totals, left, right);
            if gain <= min_gain {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    gain > b.gain || (gain == b.gain && f == b.feature && t < b.threshold)
                }
            };
            if better {
                best = Some(OracleSplit { feature: f, threshold: t, gain });
            }
        }
    }
    best
}

/// Random tiny sequence for gradient checks.
pub fn random_sequence(
    id: &str,
    len: usize,
    vocab: usize,
    demo: usize,
    stream: &mut Stream,
) -> DaySequence {
    let steps = (0..len)
        .map(|t| {
            let tokens: Vec<Vec<u32>> = (0..CHANNELS.len())
                .map(|_| (0..stream.below(3)).map(|_| stream.below(vocab as u64) as u32).collect())
                .collect();
            SeqStep {
                day: t as i64 * DAY_SECS,
                tokens,
                demographics: (0..demo).map(|_| stream.range_f64(-1.0, 1.0)).collect(),
                discharge24: if stream.bernoulli(0.7) { Some(stream.bernoulli(0.3)) } else { None },
                inpatient_now: stream.bernoulli(0.5),
                inpatient_next: stream.bernoulli(0.5),
            }
        })
        .collect();
    DaySequence { patient_id: id.into(), steps }
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter coordinate.
pub fn max_gradient_error(
    params: &GruParameters,
    batch: &[DaySequence],
    task: Task,
    mode: DropoutMode,
    step: f64,
) -> f64 {
    let (_, analytic) = loss_and_grads(params, batch, task, mode, None).unwrap();
    let mut work = params.clone();
    let n_blocks = params.param_slices().len();
    let mut worst = 0.0f64;
    for block in 0..n_blocks {
        let len = params.param_slices()[block].len();
        for j in 0..len {
            let orig = work.param_slices()[block][j];
            work.param_slices_mut()[block][j] = orig + step;
            let loss_plus = batch_loss(&work, batch, task, mode).unwrap();
            work.param_slices_mut()[block][j] = orig - step;
            let loss_minus = batch_loss(&work, batch, task, mode).unwrap();
            work.param_slices_mut()[block][j] = orig;
            let fd = (loss_plus - loss_minus) / (2.0 * step);
            let a = analytic.param_slices()[block][j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
