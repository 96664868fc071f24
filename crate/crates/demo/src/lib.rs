//! Browser bindings for the viapoint task. Every function returns a JSON string.

use aspic::env::{sample_batch, EnvConfig, Environment, LqParams};
use aspic::runner::{run_aspic, DeltaSpec, ExperimentConfig, PolicyConfig, SweepValues};
use aspic::smoothing::{find_alpha, kl_estimate, normalized_weights, AlphaSearch};
use aspic::{EstimatorKind, GaussianPolicy, KlEstimator, SolverKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Serialize)]
struct AlphaCurve {
    alphas: Vec<f64>,
    kl: Vec<f64>,
    chosen_alpha: f64,
    chosen_kl: f64,
    weights: Vec<f64>,
}

/// Weight KL over a log grid of `alpha` and the smallest `alpha` with KL below `delta`.
#[wasm_bindgen]
pub fn alpha_curve(costs: &[f64], gamma: f64, delta: f64) -> Result<String, JsError> {
    let alphas: Vec<f64> = (0..=60).map(|i| 10f64.powf(-3.0 + 8.0 * i as f64 / 60.0)).collect();
    let kl = alphas
        .iter()
        .map(|&a| kl_estimate(&normalized_weights(costs, gamma, a)?))
        .collect::<aspic::Result<Vec<f64>>>()
        .map_err(js_err)?;
    let chosen = find_alpha(costs, gamma, delta, AlphaSearch::default()).map_err(js_err)?;
    to_json(&AlphaCurve {
        alphas,
        kl,
        chosen_alpha: chosen.alpha,
        chosen_kl: chosen.kl_estimate,
        weights: chosen.weights,
    })
}

fn lq_config(delta_frac: f64, n: usize, iterations: usize, epsilon: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvConfig::LqViapoints(LqParams::default()),
        policy: PolicyConfig::TimeVaryingLinear,
        n_rollouts: n,
        iterations,
        epsilon,
        gamma: 1.0,
        delta: Some(DeltaSpec::Lognfrac(delta_frac)),
        estimator: EstimatorKind::Smoothed,
        whiten: true,
        solver: SolverKind::Cg {
            iters: 2,
            per_timestep: true,
        },
        trust_region_kl: KlEstimator::Sampled,
        seed,
        repeats: 1,
        cost_threshold: Some(2e4),
        stop_at_threshold: false,
        rollout_budget: None,
        sweep: SweepValues::default(),
    }
}

#[derive(Serialize)]
struct LqRun {
    mean_cost: Vec<f64>,
    alpha: Vec<Option<f64>>,
    iterations_to_threshold: Option<usize>,
    params: Vec<f64>,
    error: Option<String>,
}

/// Optimizes the viapoint controller with smoothing strength `delta_frac * log N`.
/// Zero strength runs the direct estimator.
#[wasm_bindgen]
pub fn lq_run(delta_frac: f64, n: usize, iterations: usize, epsilon: f64, seed: u64) -> Result<String, JsError> {
    let cfg = lq_config(delta_frac, n, iterations, epsilon, seed);
    let run = run_aspic(&cfg).map_err(js_err)?.remove(0);
    to_json(&LqRun {
        mean_cost: run.records.iter().map(|r| r.mean_cost).collect(),
        alpha: run.records.iter().map(|r| r.alpha).collect(),
        iterations_to_threshold: run.iterations_to_threshold(2e4),
        params: run.final_params.params,
        error: run.error,
    })
}

#[derive(Serialize)]
struct Paths {
    times: Vec<f64>,
    paths: Vec<Vec<f64>>,
    viapoints: Vec<(f64, f64)>,
}

/// `n` sampled state paths under the controller `params` (empty for the zero controller).
#[wasm_bindgen]
pub fn lq_paths(params: &[f64], n: usize, seed: u64) -> Result<String, JsError> {
    let cfg = lq_config(0.0, n.max(2), 1, 0.1, seed);
    let env = cfg.build_env().map_err(js_err)?;
    let zero: GaussianPolicy = cfg.initial_policy(&env, 0).map_err(js_err)?;
    let policy = if params.is_empty() {
        zero
    } else {
        zero.with_params(params.to_vec()).map_err(js_err)?
    };
    let batch = sample_batch(&env, &policy, n.max(2), seed, 1.0).map_err(js_err)?;
    let spec = env.spec();
    let lq = LqParams::default();
    to_json(&Paths {
        times: (0..=spec.steps()).map(|k| k as f64 * spec.dt).collect(),
        paths: batch.trajectories().iter().take(n).map(|t| t.states().to_vec()).collect(),
        viapoints: lq.viapoints.iter().map(|v| (v.time, v.target)).collect(),
    })
}
