//! Score-function gradient estimators over a [`RolloutBatch`].
//!
//! Every estimator returns an ascent direction `g = sum_i c_i sum_t grad log pi(a_t^i)`
//! for the update `theta <- theta + eta * F^-1 g`. They differ only in the per-sample
//! coefficients `c_i`:
//!
//! * smoothed: whitened weights `w(alpha)`, or `alpha * w(alpha)` without whitening;
//! * direct: whitened `-S`, or `-S / N` without whitening;
//! * PICE: `w(0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::policy::{GaussianPolicy, MeanModel};
use crate::smoothing::normalized_weights;
use crate::trajectory::RolloutBatch;

/// Floor on the standard deviation used for whitening.
pub const WHITEN_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Smoothed,
    Direct,
    Pice,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Smoothed => "smoothed",
            EstimatorKind::Direct => "direct",
            EstimatorKind::Pice => "pice",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Ascent direction, one entry per policy parameter.
    pub direction: Vec<f64>,
    pub estimator_kind: EstimatorKind,
    pub alpha_used: Option<f64>,
}

/// Checks that the batch was produced by a policy of this shape.
pub(crate) fn check_batch(batch: &RolloutBatch, policy: &GaussianPolicy) -> Result<()> {
    let traj = &batch.trajectories()[0];
    if traj.action_dim() != policy.action_dim() {
        return Err(Error::Structural(format!(
            "batch action dimension {} does not match policy {}",
            traj.action_dim(),
            policy.action_dim()
        )));
    }
    let (state_dim, steps) = match policy.model() {
        MeanModel::Linear(m) => (m.features.state_dim(), Some(m.steps)),
        MeanModel::Mlp(m) => (m.input_dim() - usize::from(m.time_input), None),
    };
    if traj.state_dim() != state_dim {
        return Err(Error::Structural(format!(
            "batch state dimension {} does not match policy {state_dim}",
            traj.state_dim()
        )));
    }
    if let Some(steps) = steps {
        if steps != batch.steps() {
            return Err(Error::Structural(format!(
                "batch has {} steps, policy has {steps} time blocks",
                batch.steps()
            )));
        }
    }
    Ok(())
}

/// `sum_i coeffs[i] * sum_t grad log pi(a_t^i | x_t^i, t)`.
pub(crate) fn weighted_score_sum(batch: &RolloutBatch, policy: &GaussianPolicy, coeffs: &[f64]) -> Vec<f64> {
    let p = policy.param_count();
    let parts = par::map_indexed(batch.len(), |i| {
        let mut out = vec![0.0; p];
        let c = coeffs[i];
        if c != 0.0 {
            let traj = &batch.trajectories()[i];
            for k in 0..traj.steps() {
                policy.score_into(traj.action(k), traj.state(k), k, c, &mut out);
            }
        }
        out
    });
    let mut total = vec![0.0; p];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// `(v - mean) / max(std, floor)` with the population standard deviation. Returns
/// all zeros when every entry is identical.
pub fn whiten(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return vec![0.0; values.len()];
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = std.max(WHITEN_STD_FLOOR);
    values.iter().map(|v| (v - mean) / std).collect()
}

fn need_two(batch: &RolloutBatch) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Structural(format!(
            "gradient estimators need at least 2 rollouts, got {}",
            batch.len()
        )));
    }
    Ok(())
}

fn finite(direction: Vec<f64>) -> Result<Vec<f64>> {
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("gradient estimate is not finite".into()));
    }
    Ok(direction)
}

/// Gradient of the smoothed cost `J^alpha`.
pub fn smoothed_gradient(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    alpha: f64,
    whiten_weights: bool,
) -> Result<GradientEstimate> {
    need_two(batch)?;
    check_batch(batch, policy)?;
    let w = normalized_weights(batch.stochastic_costs(), batch.gamma(), alpha)?;
    let coeffs = if whiten_weights {
        whiten(&w)
    } else {
        w.iter().map(|w| alpha * w).collect()
    };
    Ok(GradientEstimate {
        direction: finite(weighted_score_sum(batch, policy, &coeffs))?,
        estimator_kind: EstimatorKind::Smoothed,
        alpha_used: Some(alpha),
    })
}

/// REINFORCE gradient of the unsmoothed cost.
pub fn direct_gradient(batch: &RolloutBatch, policy: &GaussianPolicy, whiten_costs: bool) -> Result<GradientEstimate> {
    need_two(batch)?;
    check_batch(batch, policy)?;
    let neg: Vec<f64> = batch.stochastic_costs().iter().map(|s| -s).collect();
    let coeffs = if whiten_costs {
        whiten(&neg)
    } else {
        let n = neg.len() as f64;
        neg.iter().map(|v| v / n).collect()
    };
    Ok(GradientEstimate {
        direction: finite(weighted_score_sum(batch, policy, &coeffs))?,
        estimator_kind: EstimatorKind::Direct,
        alpha_used: None,
    })
}

/// Cross-entropy gradient toward the optimal path density, the `alpha -> 0` limit of
/// `smoothed_gradient / alpha`.
pub fn pice_gradient(batch: &RolloutBatch, policy: &GaussianPolicy) -> Result<GradientEstimate> {
    need_two(batch)?;
    check_batch(batch, policy)?;
    if !(batch.gamma() > 0.0) {
        return Err(Error::Domain("PICE gradient needs gamma > 0".into()));
    }
    let w = normalized_weights(batch.stochastic_costs(), batch.gamma(), 0.0)?;
    Ok(GradientEstimate {
        direction: finite(weighted_score_sum(batch, policy, &w))?,
        estimator_kind: EstimatorKind::Pice,
        alpha_used: Some(0.0),
    })
}

/// `-(gamma + alpha) log mean exp(-S / (gamma + alpha))` for explicit costs.
pub fn smoothed_value(costs: &[f64], gamma: f64, alpha: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::Structural("empty cost vector".into()));
    }
    if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("cost {i} is not finite")));
    }
    let temp = gamma + alpha;
    if !(temp > 0.0) {
        return Err(Error::Domain(format!("gamma + alpha must be positive, got {temp}")));
    }
    let m = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let n = costs.len() as f64;
    // log(mean exp(x)) as log1p(mean(expm1(x))) stays accurate when every x is tiny.
    let mean_expm1 = costs.iter().map(|s| (-(s - m) / temp).exp_m1()).sum::<f64>() / n;
    Ok(m - temp * mean_expm1.ln_1p())
}

/// Monte Carlo estimate of the smoothed cost `J^alpha` from a batch.
pub fn smoothed_cost_value(batch: &RolloutBatch, alpha: f64) -> Result<f64> {
    smoothed_value(batch.stochastic_costs(), batch.gamma(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_batch, Environment, LqParams, LqViapoints, Pendulum, PendulumParams, Viapoint};
    use crate::policy::TimeVaryingLinear;
    use crate::trajectory::Trajectory;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm(&d) / norm(b).max(1e-300)
    }

    fn linear_policy<E: Environment>(env: &E, scale: f64, seed: u64) -> GaussianPolicy {
        let s = env.spec();
        let model = MeanModel::Linear(TimeVaryingLinear::new(env.features(), s.steps(), s.action_dim));
        let p = GaussianPolicy::zeros(model, s.nu, s.dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..p.param_count()).map(|_| rng.random_range(-scale..scale)).collect();
        p.with_params(params).unwrap()
    }

    /// Two-step LQ problem with viapoints at both grid times.
    fn tiny_lq() -> LqViapoints {
        LqViapoints::new(LqParams {
            dt: 0.1,
            horizon: 0.2,
            nu: 1.0,
            x0: 0.0,
            sigma: 1.0,
            viapoints: vec![
                Viapoint { time: 0.1, target: 1.0 },
                Viapoint { time: 0.2, target: -0.5 },
            ],
        })
        .unwrap()
    }

    fn random_fixture(seed: u64, gamma: f64) -> (RolloutBatch, GaussianPolicy) {
        let env = Pendulum::new(PendulumParams {
            horizon: 0.5,
            ..PendulumParams::default()
        })
        .unwrap();
        let policy = linear_policy(&env, 5.0, seed);
        let batch = sample_batch(&env, &policy, 16, seed, gamma).unwrap();
        (batch, policy)
    }

    /// Costs of the same paths re-weighted to the policy `theta`:
    /// `S_theta - (gamma + alpha) log(p_theta / p_ref)` on the fixed actions and states.
    fn reweighted_costs(batch: &RolloutBatch, reference: &GaussianPolicy, theta: &GaussianPolicy, alpha: f64) -> Vec<f64> {
        let gamma = batch.gamma();
        batch
            .trajectories()
            .iter()
            .map(|t| {
                let mut s = t.state_cost_total();
                for k in 0..t.steps() {
                    let (a, x) = (t.action(k), t.state(k));
                    let lp = theta.log_prob(a, x, k);
                    let lr = reference.log_prob(a, x, k);
                    s += gamma * (lp - theta.base_log_prob(a)) - (gamma + alpha) * (lp - lr);
                }
                s
            })
            .collect()
    }

    #[test]
    fn smoothed_gradient_matches_finite_differences_on_frozen_paths() {
        let env = tiny_lq();
        let policy = linear_policy(&env, 1.0, 3);
        let batch = sample_batch(&env, &policy, 4, 17, 1.0).unwrap();
        for alpha in [0.3, 1.0, 4.0] {
            let g = smoothed_gradient(&batch, &policy, alpha, false).unwrap().direction;
            let h = 1e-5;
            let fd: Vec<f64> = (0..policy.param_count())
                .map(|j| {
                    let shifted = |d: f64| {
                        let mut p = policy.params().to_vec();
                        p[j] += d;
                        let theta = policy.with_params(p).unwrap();
                        smoothed_value(&reweighted_costs(&batch, &policy, &theta, alpha), 1.0, alpha).unwrap()
                    };
                    -(shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-4, "alpha={alpha}: {g:?} vs {fd:?}");
        }
        // At theta itself the re-weighted costs are the batch costs.
        let same = reweighted_costs(&batch, &policy, &policy, 1.0);
        for (a, b) in same.iter().zip(batch.stochastic_costs()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    fn constant_cost_batch(policy: &GaussianPolicy, env: &LqViapoints) -> RolloutBatch {
        let batch = sample_batch(env, policy, 5, 2, 0.0).unwrap();
        let trajs = batch
            .trajectories()
            .iter()
            .map(|t| {
                let mut costs = vec![0.0; t.steps()];
                costs[0] = 7.0;
                let states = t.states().to_vec();
                let actions: Vec<f64> = (0..t.steps()).flat_map(|k| t.action(k).to_vec()).collect();
                let noises: Vec<f64> = (0..t.steps()).flat_map(|k| t.noise(k).to_vec()).collect();
                Trajectory::new(1, 1, states, actions, noises, costs, t.logp_policy().to_vec(), t.logp_base().to_vec())
                    .unwrap()
            })
            .collect();
        RolloutBatch::new(trajs, 0.0).unwrap()
    }

    #[test]
    fn equal_costs() {
        let env = tiny_lq();
        let policy = linear_policy(&env, 1.0, 5);
        let batch = constant_cost_batch(&policy, &env);
        let n = batch.len() as f64;
        let alpha = 2.5;
        let uniform = weighted_score_sum(&batch, &policy, &vec![1.0 / n; batch.len()]);
        let g = smoothed_gradient(&batch, &policy, alpha, false).unwrap().direction;
        for (a, b) in g.iter().zip(&uniform) {
            assert_relative_eq!(*a, alpha * b, max_relative = 1e-12, epsilon = 1e-15);
        }
        assert!(smoothed_gradient(&batch, &policy, alpha, true).unwrap().direction.iter().all(|&v| v == 0.0));
        assert!(direct_gradient(&batch, &policy, true).unwrap().direction.iter().all(|&v| v == 0.0));
        assert_relative_eq!(smoothed_cost_value(&batch, 3.0).unwrap(), 7.0, max_relative = 1e-14);
    }

    #[test]
    fn pice_equal_costs_is_mean_score() {
        let env = tiny_lq();
        let policy = linear_policy(&env, 1.0, 6);
        let batch = sample_batch(&env, &policy, 5, 2, 1.0).unwrap();
        let trajs: Vec<Trajectory> = batch.trajectories().to_vec();
        // Same path repeated gives equal costs.
        let same = RolloutBatch::new(vec![trajs[0].clone(); 4], 1.0).unwrap();
        let g = pice_gradient(&same, &policy).unwrap().direction;
        let mean = weighted_score_sum(&same, &policy, &[0.25; 4]);
        for (a, b) in g.iter().zip(&mean) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    /// The same paths with `extra` added to the state cost of sample `index`.
    fn with_extra_cost(batch: &RolloutBatch, index: usize, extra: f64) -> RolloutBatch {
        let trajs = batch
            .trajectories()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut sc = t.state_costs().to_vec();
                if i == index {
                    sc[0] += extra;
                }
                Trajectory::new(
                    t.state_dim(),
                    t.action_dim(),
                    t.states().to_vec(),
                    (0..t.steps()).flat_map(|k| t.action(k).to_vec()).collect(),
                    (0..t.steps()).flat_map(|k| t.noise(k).to_vec()).collect(),
                    sc,
                    t.logp_policy().to_vec(),
                    t.logp_base().to_vec(),
                )
                .unwrap()
            })
            .collect();
        RolloutBatch::new(trajs, batch.gamma()).unwrap()
    }

    #[test]
    fn direct_unwhitened_points_away_from_dominant_cost() {
        let (batch, policy) = random_fixture(4, 1.0);
        let dominated = with_extra_cost(&batch, 3, 1e9);
        let g = direct_gradient(&dominated, &policy, false).unwrap().direction;
        let mut one_hot = vec![0.0; dominated.len()];
        one_hot[3] = 1.0;
        let score = weighted_score_sum(&dominated, &policy, &one_hot);
        assert!(cosine(&g, &score) < -0.999, "{}", cosine(&g, &score));
    }

    #[test]
    fn pice_dominant_sample() {
        let (batch, policy) = random_fixture(8, 1.0);
        // Sample 5 is cheaper than every other by far more than gamma.
        let favoured = with_extra_cost(&batch, 5, -1e3);
        let g = pice_gradient(&favoured, &policy).unwrap().direction;
        let mut one_hot = vec![0.0; favoured.len()];
        one_hot[5] = 1.0;
        let score = weighted_score_sum(&favoured, &policy, &one_hot);
        assert!(rel_err(&g, &score) < 1e-6);
    }

    #[test]
    fn pice_needs_positive_gamma() {
        let (batch, policy) = random_fixture(1, 0.0);
        assert!(matches!(pice_gradient(&batch, &policy), Err(Error::Domain(_))));
    }

    #[test]
    fn large_alpha_approaches_direct() {
        for seed in 0..5 {
            let (batch, policy) = random_fixture(seed, 1.0);
            let s = smoothed_gradient(&batch, &policy, 1e9, true).unwrap().direction;
            let d = direct_gradient(&batch, &policy, true).unwrap().direction;
            assert!(cosine(&s, &d) > 0.999, "seed {seed}: {}", cosine(&s, &d));
        }
    }

    #[test]
    fn small_alpha_approaches_pice() {
        for seed in 0..5 {
            let (batch, policy) = random_fixture(seed, 2.0);
            let alpha = 1e-8;
            let s: Vec<f64> = smoothed_gradient(&batch, &policy, alpha, false)
                .unwrap()
                .direction
                .iter()
                .map(|v| v / alpha)
                .collect();
            let p = pice_gradient(&batch, &policy).unwrap().direction;
            assert!(rel_err(&s, &p) < 1e-4, "seed {seed}: {}", rel_err(&s, &p));
        }
    }

    #[test]
    fn whitened_direction_interpolates_continuously() {
        let (batch, policy) = random_fixture(12, 1.0);
        let grid: Vec<f64> = (0..=60).map(|i| 10f64.powf(-3.0 + 12.0 * i as f64 / 60.0)).collect();
        let dirs: Vec<Vec<f64>> = grid
            .iter()
            .map(|&a| smoothed_gradient(&batch, &policy, a, true).unwrap().direction)
            .collect();
        for w in dirs.windows(2) {
            assert!(cosine(&w[0], &w[1]) > 0.9);
        }
    }

    #[test]
    fn smoothed_value_examples() {
        let v = smoothed_value(&[0.0, 1.0, 2.0], 0.0, 1.0).unwrap();
        let want = -((1.0 + (-1.0f64).exp() + (-2.0f64).exp()) / 3.0).ln();
        assert_eq!(v, want);
        assert_relative_eq!(v, 0.691_006_324_223_729_3, max_relative = 1e-15);
        let costs = [12.0, -3.0, 40.5, 7.25];
        let mean = costs.iter().sum::<f64>() / 4.0;
        let far = smoothed_value(&costs, 1.0, 1e12).unwrap();
        assert!((far - mean).abs() <= 1e-6 * mean.abs());
        for alpha in [0.0, 0.5, 100.0] {
            assert_relative_eq!(smoothed_value(&[3.5; 6], 1.0, alpha).unwrap(), 3.5, max_relative = 1e-15);
        }
        assert!(matches!(smoothed_value(&[1.0, f64::NAN], 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(smoothed_value(&[1.0], 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn whitening_is_shift_invariant() {
        let (batch, policy) = random_fixture(2, 1.0);
        let w0 = normalized_weights(batch.stochastic_costs(), 1.0, 3.0).unwrap();
        let shifted: Vec<f64> = batch.stochastic_costs().iter().map(|s| s + 123.0).collect();
        let w1 = normalized_weights(&shifted, 1.0, 3.0).unwrap();
        for (a, b) in whiten(&w0).iter().zip(whiten(&w1)) {
            assert!((a - b).abs() < 1e-9);
        }
        let _ = policy;
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let (batch, _) = random_fixture(2, 1.0);
        let env = tiny_lq();
        let other = linear_policy(&env, 1.0, 1);
        assert!(matches!(smoothed_gradient(&batch, &other, 1.0, true), Err(Error::Structural(_))));
    }
}
