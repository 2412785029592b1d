//! Shared helpers for the recurrent-model unit tests.

use crate::features::{DaySequence, SeqStep, CHANNELS};
use crate::rng::Stream;
use crate::timeutil::DAY_SECS;

pub(crate) fn random_sequence(
    id: &str,
    len: usize,
    vocab: usize,
    demo: usize,
    stream: &mut Stream,
) -> DaySequence {
    let steps = (0..len)
        .map(|t| {
            let tokens: Vec<Vec<u32>> = (0..CHANNELS.len())
                .map(|_| {
                    (0..stream.below(3)).map(|_| stream.below(vocab as u64) as u32).collect()
                })
                .collect();
            SeqStep {
                day: t as i64 * DAY_SECS,
                tokens,
                demographics: (0..demo).map(|_| stream.range_f64(-1.0, 1.0)).collect(),
                discharge24: if stream.bernoulli(0.7) {
                    Some(stream.bernoulli(0.3))
                } else {
                    None
                },
                inpatient_now: stream.bernoulli(0.5),
                inpatient_next: stream.bernoulli(0.5),
            }
        })
        .collect();
    DaySequence { patient_id: id.into(), steps }
}
