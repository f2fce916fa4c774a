mod common;

use common::*;
use factrl::grpo::{objective_gradient, NormalizationMode, SurrogateMode, TrainConfig};
use rand::Rng;

const H: f64 = 1e-5;

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = rng(11);
    let vocab = tiny_vocab();
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let cfg = TrainConfig {
            beta: if case % 4 == 0 {
                0.0
            } else {
                rng.random_range(0.0..0.5)
            },
            surrogate_mode: if case % 2 == 0 {
                SurrogateMode::PaperLiteral
            } else {
                SurrogateMode::PpoStyle
            },
            normalization_mode: if case % 3 == 0 {
                NormalizationMode::PerOutput
            } else {
                NormalizationMode::PaperGlobal
            },
            ..Default::default()
        };
        let params = random_params(&vocab, &mut rng, 1.0);
        let reference = random_params(&vocab, &mut rng, 1.0);
        let group = random_group(&params, 2, 3, cfg.epsilon, 1e-3, &mut rng);
        let analytic =
            objective_gradient(std::slice::from_ref(&group), &params, &reference, &cfg).unwrap();
        let numeric = central_diff(params.logits(), H, |x| {
            objective_at(&group, &params, x, &reference, &cfg)
        });
        let err = max_rel_err(&analytic, &numeric);
        worst = worst.max(err);
        assert!(err <= 1e-5, "case {case}: relative error {err:e}");
    }
    println!("worst relative error {worst:e}");
}
