//! GRU forward pass and manual backpropagation through time.
//!
//! Recurrence (h_0 = 0):
//!   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//!   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//!   c_t = tanh(W_h x_t + U_h (r_t . h_{t-1}) + b_h)
//!   h_t = (1 - z_t) . h_{t-1} + z_t . c_t
//!
//! x_t is the concat of per-table embedding means and the demographics
//! block. Inverted dropout applies to x_t and to the GRU output in train
//! mode, with masks drawn from a seeded stream so training is reproducible
//! and finite-difference checks see a deterministic function.

use crate::error::{Error, Result};
use crate::features::{DaySequence, SeqStep};
use crate::gru::{matvec_add, matvec_t_add, outer_add, GruParameters, Task};
use crate::mathx::{clamp_prob, sigmoid};
use crate::rng::{SeedBank, Stream};

#[derive(Debug, Clone, Copy)]
pub enum DropoutMode {
    Eval,
    Train { p: f64, seed: u64 },
}

pub(crate) fn step_target(step: &SeqStep, task: Task) -> Option<bool> {
    match task {
        Task::Discharge24 => step.discharge24,
        Task::InpatientNow => Some(step.inpatient_now),
        Task::InpatientNext => Some(step.inpatient_next),
    }
}

struct StepCache {
    tokens_by_table: Vec<Vec<u32>>,
    x: Vec<f64>,
    /// scaled input dropout mask; empty in eval mode
    m_in: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    rh: Vec<f64>,
    /// scaled output dropout mask; empty in eval mode
    m_out: Vec<f64>,
    h_out: Vec<f64>,
    probs: [f64; 3],
}

struct SeqCache {
    steps: Vec<StepCache>,
}

fn dropout_mask(len: usize, p: f64, stream: &mut Stream) -> Vec<f64> {
    let keep = 1.0 - p;
    (0..len)
        .map(|_| if stream.unit() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn forward(
    params: &GruParameters,
    batch: &[DaySequence],
    mode: DropoutMode,
) -> Result<Vec<SeqCache>> {
    let hidden = params.hidden;
    let x_dim = params.input_width();
    let concat_width = params.layout.concat_width();
    let mut dropout_stream = match mode {
        DropoutMode::Eval => None,
        DropoutMode::Train { seed, .. } => Some(SeedBank::new(seed).stream("gru-dropout")),
    };

    let mut caches = Vec::with_capacity(batch.len());
    for seq in batch {
        if seq.is_empty() {
            return Err(Error::data(format!("empty sequence for patient {}", seq.patient_id)));
        }
        let mut steps = Vec::with_capacity(seq.len());
        let mut h_prev = vec![0.0; hidden];
        for step in &seq.steps {
            if step.demographics.len() != params.demo_width {
                return Err(Error::data("step demographics width mismatch"));
            }
            // per-table token lists and embedding means
            let mut tokens_by_table: Vec<Vec<u32>> =
                vec![Vec::new(); params.embeddings.len()];
            for (channel_slot, locals) in step.tokens.iter().enumerate() {
                let (table, offset) = params.layout.channel_map[channel_slot];
                for &local in locals {
                    tokens_by_table[table].push(offset as u32 + local);
                }
            }
            let mut x = vec![0.0; x_dim];
            let mut seg = 0usize;
            for (table, tokens) in tokens_by_table.iter().enumerate() {
                let dim = params.layout.tables[table].1;
                if !tokens.is_empty() {
                    let scale = 1.0 / tokens.len() as f64;
                    for &tok in tokens {
                        let row = params.embeddings[table].row(tok as usize);
                        for (xi, &e) in x[seg..seg + dim].iter_mut().zip(row) {
                            *xi += e * scale;
                        }
                    }
                }
                seg += dim;
            }
            x[concat_width..].copy_from_slice(&step.demographics);

            let m_in = match (&mut dropout_stream, mode) {
                (Some(stream), DropoutMode::Train { p, .. }) if p > 0.0 => {
                    let m = dropout_mask(x_dim, p, stream);
                    for (xi, mi) in x.iter_mut().zip(&m) {
                        *xi *= mi;
                    }
                    m
                }
                _ => Vec::new(),
            };

            let mut z = params.b_z.clone();
            matvec_add(&params.w_z, &x, &mut z);
            matvec_add(&params.u_z, &h_prev, &mut z);
            for v in &mut z {
                *v = sigmoid(*v);
            }
            let mut r = params.b_r.clone();
            matvec_add(&params.w_r, &x, &mut r);
            matvec_add(&params.u_r, &h_prev, &mut r);
            for v in &mut r {
                *v = sigmoid(*v);
            }
            let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
            let mut c = params.b_h.clone();
            matvec_add(&params.w_h, &x, &mut c);
            matvec_add(&params.u_h, &rh, &mut c);
            for v in &mut c {
                *v = v.tanh();
            }
            let h: Vec<f64> = (0..hidden)
                .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * c[j])
                .collect();

            let (m_out, h_out) = match (&mut dropout_stream, mode) {
                (Some(stream), DropoutMode::Train { p, .. }) if p > 0.0 => {
                    let m = dropout_mask(hidden, p, stream);
                    let hd: Vec<f64> = h.iter().zip(&m).map(|(a, b)| a * b).collect();
                    (m, hd)
                }
                _ => (Vec::new(), h.clone()),
            };

            let mut probs = [0.0f64; 3];
            for k in 0..3 {
                let mut logit = params.head_b[k];
                for (w, hj) in params.head_w.row(k).iter().zip(&h_out) {
                    logit += w * hj;
                }
                probs[k] = sigmoid(logit);
            }

            h_prev = h.clone();
            steps.push(StepCache {
                tokens_by_table,
                x,
                m_in,
                z,
                r,
                c,
                h,
                rh,
                m_out,
                h_out,
                probs,
            });
        }
        caches.push(SeqCache { steps });
    }
    Ok(caches)
}

/// Per-step head probabilities for one sequence, eval mode (no dropout).
pub fn forward_sequence(params: &GruParameters, seq: &DaySequence) -> Result<Vec<[f64; 3]>> {
    let caches = forward(params, std::slice::from_ref(seq), DropoutMode::Eval)?;
    Ok(caches[0].steps.iter().map(|s| s.probs).collect())
}

/// Forward-only loss of the active head (same value `loss_and_grads`
/// returns); the function finite-difference checks differentiate.
pub fn batch_loss(
    params: &GruParameters,
    batch: &[DaySequence],
    task: Task,
    mode: DropoutMode,
) -> Result<f64> {
    let caches = forward(params, batch, mode)?;
    let head = task.head();
    let mut count = 0usize;
    let mut loss = 0.0;
    for (seq, cache) in batch.iter().zip(&caches) {
        for (step, sc) in seq.steps.iter().zip(&cache.steps) {
            if let Some(y) = step_target(step, task) {
                count += 1;
                let p = clamp_prob(sc.probs[head]);
                loss -= if y { p.ln() } else { (1.0 - p).ln() };
            }
        }
    }
    if count == 0 {
        return Err(Error::data(format!("batch has no labeled steps for task {task:?}")));
    }
    Ok(loss / count as f64)
}

/// Mean binary cross-entropy of the active head over steps where its target
/// is defined, plus gradients for every parameter (embeddings included) via
/// full backpropagation through time.
pub fn loss_and_grads(
    params: &GruParameters,
    batch: &[DaySequence],
    task: Task,
    mode: DropoutMode,
    bptt_chunk: Option<usize>,
) -> Result<(f64, GruParameters)> {
    let caches = forward(params, batch, mode)?;
    let head = task.head();

    let mut count = 0usize;
    let mut loss = 0.0;
    for (seq, cache) in batch.iter().zip(&caches) {
        for (step, sc) in seq.steps.iter().zip(&cache.steps) {
            if let Some(y) = step_target(step, task) {
                count += 1;
                let p = clamp_prob(sc.probs[head]);
                loss -= if y { p.ln() } else { (1.0 - p).ln() };
            }
        }
    }
    if count == 0 {
        return Err(Error::data(format!("batch has no labeled steps for task {task:?}")));
    }
    let loss = loss / count as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite loss".into()));
    }

    let hidden = params.hidden;
    let concat_width = params.layout.concat_width();
    let mut grads = params.zeros_like();

    let zero = vec![0.0; hidden];
    for (seq, cache) in batch.iter().zip(&caches) {
        let mut dh_next = vec![0.0; hidden];
        for t in (0..seq.steps.len()).rev() {
            let sc = &cache.steps[t];
            let mut dh = std::mem::replace(&mut dh_next, vec![0.0; hidden]);

            if let Some(y) = step_target(&seq.steps[t], task) {
                let dlogit = (sc.probs[head] - if y { 1.0 } else { 0.0 }) / count as f64;
                grads.head_b[head] += dlogit;
                for (g, hj) in grads.head_w.row_mut(head).iter_mut().zip(&sc.h_out) {
                    *g += dlogit * hj;
                }
                // through output dropout
                let w_row = params.head_w.row(head);
                if sc.m_out.is_empty() {
                    for j in 0..hidden {
                        dh[j] += dlogit * w_row[j];
                    }
                } else {
                    for j in 0..hidden {
                        dh[j] += dlogit * w_row[j] * sc.m_out[j];
                    }
                }
            }

            let h_prev: &[f64] = if t == 0 { &zero } else { &cache.steps[t - 1].h };

            // gate backward
            let mut dz = vec![0.0; hidden];
            let mut dc = vec![0.0; hidden];
            let mut dh_prev = vec![0.0; hidden];
            for j in 0..hidden {
                dz[j] = dh[j] * (sc.c[j] - h_prev[j]);
                dc[j] = dh[j] * sc.z[j];
                dh_prev[j] = dh[j] * (1.0 - sc.z[j]);
            }
            let da_c: Vec<f64> =
                (0..hidden).map(|j| dc[j] * (1.0 - sc.c[j] * sc.c[j])).collect();
            outer_add(&mut grads.w_h, &da_c, &sc.x);
            outer_add(&mut grads.u_h, &da_c, &sc.rh);
            for (g, d) in grads.b_h.iter_mut().zip(&da_c) {
                *g += d;
            }
            let mut d_rh = vec![0.0; hidden];
            matvec_t_add(&params.u_h, &da_c, &mut d_rh);
            let mut dr = vec![0.0; hidden];
            for j in 0..hidden {
                dr[j] = d_rh[j] * h_prev[j];
                dh_prev[j] += d_rh[j] * sc.r[j];
            }
            let da_z: Vec<f64> =
                (0..hidden).map(|j| dz[j] * sc.z[j] * (1.0 - sc.z[j])).collect();
            let da_r: Vec<f64> =
                (0..hidden).map(|j| dr[j] * sc.r[j] * (1.0 - sc.r[j])).collect();
            outer_add(&mut grads.w_z, &da_z, &sc.x);
            outer_add(&mut grads.u_z, &da_z, h_prev);
            for (g, d) in grads.b_z.iter_mut().zip(&da_z) {
                *g += d;
            }
            outer_add(&mut grads.w_r, &da_r, &sc.x);
            outer_add(&mut grads.u_r, &da_r, h_prev);
            for (g, d) in grads.b_r.iter_mut().zip(&da_r) {
                *g += d;
            }
            matvec_t_add(&params.u_z, &da_z, &mut dh_prev);
            matvec_t_add(&params.u_r, &da_r, &mut dh_prev);

            // input gradient -> embedding tables
            let mut dx = vec![0.0; params.input_width()];
            matvec_t_add(&params.w_z, &da_z, &mut dx);
            matvec_t_add(&params.w_r, &da_r, &mut dx);
            matvec_t_add(&params.w_h, &da_c, &mut dx);
            if !sc.m_in.is_empty() {
                for (d, m) in dx.iter_mut().zip(&sc.m_in) {
                    *d *= m;
                }
            }
            let mut seg = 0usize;
            for (table, tokens) in sc.tokens_by_table.iter().enumerate() {
                let dim = params.layout.tables[table].1;
                if !tokens.is_empty() {
                    let scale = 1.0 / tokens.len() as f64;
                    for &tok in tokens {
                        let row = grads.embeddings[table].row_mut(tok as usize);
                        for (g, d) in row.iter_mut().zip(&dx[seg..seg + dim]) {
                            *g += d * scale;
                        }
                    }
                }
                seg += dim;
            }
            debug_assert_eq!(seg, concat_width); // demographics tail carries no params

            // truncated BPTT detaches at chunk boundaries
            let detach = matches!(bptt_chunk, Some(k) if k > 0 && t % k == 0);
            if !detach {
                dh_next = dh_prev;
            }
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DaySequence, SeqStep, CHANNELS};
    use crate::gru::testutil::random_sequence;
    use crate::gru::{init_gru, TrainConfig};
    use crate::rng::SeedBank;

    fn tiny_config(hidden: usize, seed: u64) -> TrainConfig {
        TrainConfig { hidden, seed, ..Default::default() }
    }

    #[test]
    fn zero_parameters_give_half_probabilities() {
        let cfg = tiny_config(4, 1);
        let params = init_gru(&[3; 6], 2, &cfg).unwrap().zeros_like();
        let mut stream = SeedBank::new(2).stream("seq");
        let seq = random_sequence("p", 3, 3, 2, &mut stream);
        for probs in forward_sequence(&params, &seq).unwrap() {
            assert_eq!(probs, [0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let cfg = tiny_config(6, 3);
        let params = init_gru(&[4; 6], 3, &cfg).unwrap();
        let mut stream = SeedBank::new(5).stream("seq");
        let seq = random_sequence("p", 20, 4, 3, &mut stream);
        let caches = forward(&params, std::slice::from_ref(&seq), DropoutMode::Eval).unwrap();
        for step in &caches[0].steps {
            assert!(step.h.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let cfg = tiny_config(5, 4);
        let params = init_gru(&[4; 6], 2, &cfg).unwrap();
        let mut stream = SeedBank::new(6).stream("seq");
        let seq = random_sequence("p", 8, 4, 2, &mut stream);
        let a = forward_sequence(&params, &seq).unwrap();
        let b = forward_sequence(&params, &seq).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_half_outputs_mean_ln2_loss() {
        let cfg = tiny_config(4, 1);
        let params = init_gru(&[3; 6], 2, &cfg).unwrap().zeros_like();
        let mut stream = SeedBank::new(2).stream("seq");
        let batch = vec![random_sequence("p", 5, 3, 2, &mut stream)];
        let (loss, _) =
            loss_and_grads(&params, &batch, Task::InpatientNow, DropoutMode::Eval, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn batch_with_no_labeled_steps_errors() {
        let cfg = tiny_config(4, 1);
        let params = init_gru(&[3; 6], 2, &cfg).unwrap();
        let mut stream = SeedBank::new(2).stream("seq");
        let mut seq = random_sequence("p", 4, 3, 2, &mut stream);
        for s in &mut seq.steps {
            s.discharge24 = None;
        }
        let err = loss_and_grads(&params, &[seq], Task::Discharge24, DropoutMode::Eval, None);
        assert!(err.is_err());
    }

    #[test]
    fn single_token_mean_is_that_embedding_row() {
        let cfg = tiny_config(3, 9);
        let params = init_gru(&[5; 6], 1, &cfg).unwrap();
        let mut step = SeqStep {
            day: 0,
            tokens: vec![Vec::new(); CHANNELS.len()],
            demographics: vec![0.25],
            discharge24: Some(true),
            inpatient_now: true,
            inpatient_next: false,
        };
        step.tokens[2] = vec![3]; // single medication token
        let seq = DaySequence { patient_id: "p".into(), steps: vec![step] };
        let caches = forward(&params, std::slice::from_ref(&seq), DropoutMode::Eval).unwrap();
        let x = &caches[0].steps[0].x;
        let dim = params.layout.tables[2].1;
        let seg: usize = params.layout.tables[..2].iter().map(|&(_, d)| d).sum();
        assert_eq!(&x[seg..seg + dim], params.embeddings[2].row(3));
    }

    #[test]
    fn train_mode_same_seed_reproducible() {
        let cfg = tiny_config(4, 7);
        let params = init_gru(&[3; 6], 2, &cfg).unwrap();
        let mut stream = SeedBank::new(8).stream("seq");
        let batch = vec![random_sequence("p", 6, 3, 2, &mut stream)];
        let mode = DropoutMode::Train { p: 0.2, seed: 31 };
        let (l1, g1) = loss_and_grads(&params, &batch, Task::InpatientNow, mode, None).unwrap();
        let (l2, g2) = loss_and_grads(&params, &batch, Task::InpatientNow, mode, None).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
