//! Tiny numeric helpers shared by the models.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Probability clamp used before log-loss and Newton statistics.
pub const PROB_EPS: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean binary cross-entropy. `labels` are 0/1.
pub fn log_loss(probs: &[f64], labels: &[u8]) -> f64 {
    debug_assert_eq!(probs.len(), labels.len());
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = clamp_prob(p);
        sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    sum / probs.len() as f64
}
