//! The outer optimization loop, sweeps and result export.
//!
//! One iteration: draw `N` rollouts, choose `alpha` for the smoothing strength, form the
//! whitened smoothed gradient, take a trust-region natural-gradient step. The direct
//! and PICE estimators replace the middle two steps.
//!
//! Seeds follow the path `master -> repeat -> iteration -> rollout` through
//! [`crate::seed::derive`], so every record stream is a pure function of the config.

mod config;
pub mod export;
pub mod sweep;

use serde::{Deserialize, Serialize};

pub use config::{git_blob_hash, DeltaSpec, ExperimentConfig, PolicyConfig, SweepValues};

use crate::env::{sample_batch, Env};
use crate::error::Result;
use crate::gradients::{direct_gradient, pice_gradient, smoothed_gradient, EstimatorKind};
use crate::natural::trust_region_step_with;
use crate::policy::{GaussianPolicy, ParamCheckpoint};
use crate::smoothing::{find_alpha, kl_estimate, normalized_weights, AlphaSearch};
use crate::trajectory::batch_mean_cost;
use crate::{par, seed};

/// One row of experiment output. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub run: usize,
    pub iter: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub alpha: Option<f64>,
    pub kl_est: Option<f64>,
    pub eta: f64,
    pub achieved_kl: f64,
    pub wall_ms: f64,
    pub seed: u64,
}

/// Records and final state of one repeat. A failed run keeps the records produced
/// before the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub final_params: ParamCheckpoint,
    pub error: Option<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_cost)
    }

    /// Index of the first iteration whose batch mean cost is at or below `threshold`.
    pub fn iterations_to_threshold(&self, threshold: f64) -> Option<usize> {
        iterations_to_threshold(&self.records, threshold)
    }
}

pub fn iterations_to_threshold(records: &[IterationRecord], threshold: f64) -> Option<usize> {
    records.iter().find(|r| r.mean_cost <= threshold).map(|r| r.iter)
}

/// Seed of repeat `run` under the master seed.
pub fn run_seed(master: u64, run: usize) -> u64 {
    seed::derive(master, run as u64)
}

/// Seed of the policy initialization (only used by random initializations).
fn init_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, u64::MAX)
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }

    fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

// No monotonic clock on bare wasm32.
#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Clock
    }

    fn ms(&self) -> f64 {
        0.0
    }
}

/// Runs one iteration from `policy` and returns the record and the updated policy.
fn iterate(
    config: &ExperimentConfig,
    env: &Env,
    policy: &GaussianPolicy,
    run: usize,
    run_seed: u64,
    iter: usize,
) -> Result<(IterationRecord, GaussianPolicy)> {
    let clock = Clock::start();
    let batch = sample_batch(env, policy, config.n_rollouts, seed::derive(run_seed, iter as u64), config.gamma)?;
    let mean_cost = batch_mean_cost(&batch)?;
    let std_cost = batch.cost_std();
    let costs = batch.stochastic_costs();

    let (g, alpha, kl_est) = match config.effective_estimator() {
        EstimatorKind::Smoothed => {
            let delta = config.delta_value().expect("validated");
            let sm = find_alpha(costs, config.gamma, delta, AlphaSearch::default())?;
            let g = smoothed_gradient(&batch, policy, sm.alpha, config.whiten)?;
            (g, Some(sm.alpha), Some(sm.kl_estimate))
        }
        EstimatorKind::Direct => (direct_gradient(&batch, policy, config.whiten)?, None, None),
        EstimatorKind::Pice => {
            let kl = kl_estimate(&normalized_weights(costs, config.gamma, 0.0)?)?;
            (pice_gradient(&batch, policy)?, Some(0.0), Some(kl))
        }
    };
    let update = trust_region_step_with(
        &batch,
        policy,
        &g.direction,
        config.epsilon,
        config.solver,
        config.trust_region_kl,
    )?;
    let next = policy.with_params(update.new_params)?;
    let record = IterationRecord {
        run,
        iter,
        mean_cost,
        std_cost,
        alpha,
        kl_est,
        eta: update.eta,
        achieved_kl: update.achieved_kl,
        wall_ms: clock.ms(),
        seed: run_seed,
    };
    Ok((record, next))
}

/// Runs repeat `run` of a validated config.
pub fn run_single(config: &ExperimentConfig, run: usize) -> Result<RunResult> {
    let env = config.build_env()?;
    let seed = run_seed(config.seed, run);
    let mut policy = config.initial_policy(&env, init_seed(seed))?;
    let mut records = Vec::with_capacity(config.iterations);
    let mut error = None;
    for iter in 0..config.iterations {
        match iterate(config, &env, &policy, run, seed, iter) {
            Ok((record, next)) => {
                let reached = config.cost_threshold.is_some_and(|c| record.mean_cost <= c);
                records.push(record);
                policy = next;
                if reached && config.stop_at_threshold {
                    break;
                }
            }
            Err(e) => {
                error = Some(format!("iteration {iter}: {e}"));
                break;
            }
        }
    }
    Ok(RunResult {
        run,
        seed,
        records,
        final_params: policy.checkpoint(),
        error,
    })
}

/// Runs every repeat of `config`. Repeats run in parallel; the result is ordered by
/// repeat index.
pub fn run_aspic(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    par::map_indexed(config.repeats, |run| run_single(config, run))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq_config(estimator: &str, iterations: usize, repeats: usize) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "env": {{"kind": "lq_viapoints"}},
                "n_rollouts": 20, "iterations": {iterations}, "epsilon": 0.1, "gamma": 1.0,
                "delta": {{"lognfrac": 0.2}}, "estimator": "{estimator}",
                "solver": {{"kind": "cg", "iters": 2, "per_timestep": true}},
                "seed": 5, "repeats": {repeats}
            }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    fn strip_clock(runs: &[RunResult]) -> Vec<IterationRecord> {
        runs.iter()
            .flat_map(|r| r.records.iter().cloned())
            .map(|mut r| {
                r.wall_ms = 0.0;
                r
            })
            .collect()
    }

    #[test]
    fn same_seed_same_records() {
        let cfg = lq_config("smoothed", 4, 2);
        let a = run_aspic(&cfg).unwrap();
        let b = run_aspic(&cfg).unwrap();
        assert_eq!(strip_clock(&a), strip_clock(&b));
        assert_eq!(a[0].final_params, b[0].final_params);
        assert_ne!(a[0].seed, a[1].seed);
        let mut other = cfg.clone();
        other.seed = 6;
        assert_ne!(strip_clock(&a), strip_clock(&run_aspic(&other).unwrap()));
    }

    #[test]
    fn record_shape_per_estimator() {
        for (est, has_alpha) in [("smoothed", true), ("direct", false), ("pice", true)] {
            let runs = run_aspic(&lq_config(est, 3, 2)).unwrap();
            assert_eq!(runs.len(), 2);
            for run in &runs {
                assert!(!run.failed(), "{:?}", run.error);
                assert_eq!(run.records.len(), 3);
                for (i, r) in run.records.iter().enumerate() {
                    assert_eq!(r.iter, i);
                    assert_eq!(r.alpha.is_some(), has_alpha);
                    assert!(r.mean_cost.is_finite() && r.std_cost.is_finite());
                    assert!((r.achieved_kl - 0.1).abs() <= 0.01);
                    assert_eq!(r.seed, run.seed);
                }
            }
        }
    }

    #[test]
    fn cost_decreases_on_lq() {
        let runs = run_aspic(&lq_config("smoothed", 100, 1)).unwrap();
        let r = &runs[0].records;
        assert!(r.last().unwrap().mean_cost < 0.8 * r[0].mean_cost, "{} -> {}", r[0].mean_cost, r.last().unwrap().mean_cost);
    }

    #[test]
    fn stop_at_threshold_truncates() {
        let mut cfg = lq_config("smoothed", 50, 1);
        cfg.cost_threshold = Some(f64::INFINITY);
        cfg.stop_at_threshold = true;
        let runs = run_aspic(&cfg).unwrap();
        assert_eq!(runs[0].records.len(), 1);
        assert_eq!(runs[0].iterations_to_threshold(f64::INFINITY), Some(0));
        assert_eq!(runs[0].iterations_to_threshold(f64::NEG_INFINITY), None);
    }

    #[test]
    fn mlp_policy_runs() {
        let text = r#"{
            "env": {"kind": "pendulum", "horizon": 0.5},
            "policy": {"family": "mlp", "hidden": [8, 8]},
            "n_rollouts": 10, "iterations": 3, "epsilon": 0.05, "gamma": 1.0,
            "delta": {"absolute": 0.5}, "estimator": "smoothed",
            "solver": {"kind": "cg", "iters": 10}
        }"#;
        let runs = run_aspic(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        assert!(!runs[0].failed(), "{:?}", runs[0].error);
        assert_eq!(runs[0].final_params.shape, vec![3, 8, 8, 1]);
    }

    #[test]
    fn failure_keeps_partial_records() {
        // A huge trust region drives the states past the blow-up limit.
        let text = r#"{
            "env": {"kind": "lq_viapoints"},
            "n_rollouts": 10, "iterations": 40, "epsilon": 1e9, "gamma": 1.0,
            "delta": {"absolute": 0.5}, "estimator": "smoothed",
            "solver": {"kind": "cg", "iters": 2, "per_timestep": true}
        }"#;
        let runs = run_aspic(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        let run = &runs[0];
        assert!(run.failed());
        assert!(run.records.len() < 40);
        assert_eq!(run.final_params.params.len(), 200);
    }
}
