use aspic::env::{sample_batch, Environment, Pendulum, PendulumParams};
use aspic::gradients::smoothed_value;
use aspic::natural::{trust_region_step, SolverKind, KL_TOLERANCE};
use aspic::policy::{GaussianPolicy, MeanModel, TimeVaryingLinear};
use aspic::smoothing::{find_alpha, kl_estimate, normalized_weights, AlphaSearch};
use aspic::smoothed_gradient;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_kl_decreases_in_alpha(
        costs in prop::collection::vec(-1e3f64..1e3, 2..60),
        gamma in 0.0f64..3.0,
        a in 1e-4f64..1e3,
        factor in 1.0f64..100.0,
    ) {
        let lo = kl_estimate(&normalized_weights(&costs, gamma, a).unwrap()).unwrap();
        let hi = kl_estimate(&normalized_weights(&costs, gamma, a * factor).unwrap()).unwrap();
        prop_assert!(hi <= lo + 1e-12, "{lo} -> {hi}");
        prop_assert!((0.0..=(costs.len() as f64).ln() + 1e-12).contains(&lo));
    }

    #[test]
    fn smoothed_value_sits_between_min_and_mean(
        costs in prop::collection::vec(-1e3f64..1e3, 1..40),
        gamma in 0.0f64..3.0,
        alpha in 1e-3f64..1e4,
    ) {
        let v = smoothed_value(&costs, gamma, alpha).unwrap();
        let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let slack = 1e-9 * (1.0 + mean.abs());
        prop_assert!(v >= min - slack && v <= mean + slack, "{min} <= {v} <= {mean}");
    }

    #[test]
    fn chosen_alpha_meets_the_constraint(
        costs in prop::collection::vec(0.0f64..1e4, 2..80),
        frac in 0.01f64..0.95,
    ) {
        let delta = frac * (costs.len() as f64).ln();
        let r = find_alpha(&costs, 1.0, delta, AlphaSearch::default()).unwrap();
        prop_assert!(r.kl_estimate <= delta);
        prop_assert!((r.kl_estimate - ((costs.len() as f64).ln() - r.entropy)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trust_region_hits_its_target(seed in 0u64..1000, log_eps in -3.0f64..0.5, pinv in any::<bool>()) {
        let env = Pendulum::new(PendulumParams { horizon: 0.3, ..PendulumParams::default() }).unwrap();
        let s = env.spec();
        let model = MeanModel::Linear(TimeVaryingLinear::new(env.features(), s.steps(), 1));
        let policy = GaussianPolicy::zeros(model, s.nu, s.dt).unwrap();
        let batch = sample_batch(&env, &policy, 12, seed, 1.0).unwrap();
        let g = smoothed_gradient(&batch, &policy, 1.0, true).unwrap().direction;
        let solver = if pinv { SolverKind::PerTimestepPinv { rcond: 1e-4 } } else { SolverKind::Cg { iters: 5, per_timestep: false } };
        let eps = 10f64.powf(log_eps);
        let up = trust_region_step(&batch, &policy, &g, eps, solver).unwrap();
        prop_assert!((up.achieved_kl - eps).abs() <= KL_TOLERANCE * eps);
        prop_assert!(up.new_params.iter().all(|v| v.is_finite()));
    }
}
