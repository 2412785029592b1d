//! Analytic BPTT gradients vs central finite differences on random tiny
//! configurations, covering both embedding modes, all three tasks, and
//! seeded dropout.

mod common;

use discharge::gru::{init_gru, DropoutMode, EmbedMode, Task, TrainConfig, TASKS};
use discharge::rng::SeedBank;

#[test]
fn gradients_match_finite_differences_on_random_tiny_nets() {
    let bank = SeedBank::new(0xBEEF);
    let mut shape_stream = bank.stream("shapes");
    let mut worst_overall = 0.0f64;
    for case in 0..50u64 {
        let hidden = 2 + (case % 4) as usize;
        let vocab = 3 + (case % 3) as usize;
        let demo = 1 + (case % 3) as usize;
        let embed_mode = if case % 2 == 0 { EmbedMode::PerFeature25 } else { EmbedMode::Grouped50 };
        let task = TASKS[(case % 3) as usize];
        let dropout = if case % 5 == 0 { 0.2 } else { 0.0 };
        let config = TrainConfig { hidden, embed_mode, seed: 100 + case, ..Default::default() };
        let params = init_gru(&[vocab; 6], demo, &config).unwrap();

        let mut seq_stream = bank.stream_indexed("sequences", case);
        let batch: Vec<_> = (0..1 + (case % 2))
            .map(|b| {
                common::random_sequence(
                    &format!("p{case}-{b}"),
                    1 + (shape_stream.below(3) as usize),
                    vocab,
                    demo,
                    &mut seq_stream,
                )
            })
            .collect();
        // task 0 needs at least one labeled step; skip the rare all-None draw
        let has_labels = batch.iter().any(|s| {
            s.steps.iter().any(|st| match task {
                Task::Discharge24 => st.discharge24.is_some(),
                _ => true,
            })
        });
        if !has_labels {
            continue;
        }
        let mode = if dropout > 0.0 {
            DropoutMode::Train { p: dropout, seed: 7 + case }
        } else {
            DropoutMode::Eval
        };
        let err = common::max_gradient_error(&params, &batch, task, mode, 1e-5);
        worst_overall = worst_overall.max(err);
        assert!(
            err < 1e-4,
            "case {case}: max relative gradient error {err:.3e} (hidden {hidden}, task {task:?})"
        );
    }
    println!("worst relative gradient error over 50 configs: {worst_overall:.3e}");
}
