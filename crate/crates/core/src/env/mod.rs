//! Benchmark control problems `dx = f(x,t) dt + g(x,t) (u dt + dW)` discretized with
//! an explicit Euler step, plus the rollout sampler.
//!
//! The noisy action is `a_k = u_theta(x_k, t_k) + xi_k` with `xi_k ~ N(0, nu/dt)` per
//! component, and the state advances as `x_{k+1} = x_k + dt (f(x_k) + g(x_k) a_k)`.

mod acrobot;
mod lq;
mod pendulum;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{FeatureMap, GaussianPolicy};
use crate::trajectory::{RolloutBatch, Trajectory};
use crate::{par, seed};

pub use acrobot::{Acrobot, AcrobotParams, MassMatrix};
pub use lq::{LqParams, LqViapoints, Viapoint};
pub use pendulum::{Pendulum, PendulumParams};

/// A state component beyond this magnitude aborts the rollout.
pub const BLOW_UP_LIMIT: f64 = 1e8;

/// Grid index nearest to time `t`.
pub(crate) fn grid_index(t: f64, dt: f64) -> usize {
    (t / dt).round().max(0.0) as usize
}

/// Dimensions, time grid, noise level and initial state of a control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub nu: f64,
    pub x0: Vec<f64>,
    steps: usize,
}

impl EnvSpec {
    /// Validates positivity and that `horizon / dt` is an integer.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        dt: f64,
        horizon: f64,
        nu: f64,
        x0: Vec<f64>,
    ) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) || !(nu > 0.0) {
            return Err(Error::Config(format!(
                "dt, horizon and nu must be positive, got dt={dt}, horizon={horizon}, nu={nu}"
            )));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::Config(format!(
                "horizon {horizon} is not an integer multiple of dt {dt}"
            )));
        }
        if x0.len() != state_dim {
            return Err(Error::Config(format!(
                "initial state has {} components, expected {state_dim}",
                x0.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }
        Ok(Self {
            state_dim,
            action_dim,
            dt,
            horizon,
            nu,
            x0,
            steps: steps as usize,
        })
    }

    /// Number of control steps `T / dt`.
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// A control-affine system with delta-function state costs.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Uncontrolled drift `f(x, t)`.
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// `g(x, t) a`.
    fn control_effect(&self, x: &[f64], t: f64, a: &[f64], out: &mut [f64]);

    /// Delta cost charged when the state at grid index `index` is `x`.
    fn delta_cost(&self, index: usize, x: &[f64]) -> f64;

    /// Running cost rate `V(x, t)`; charged as `V dt` per step.
    fn running_cost(&self, _x: &[f64], _t: f64) -> f64 {
        0.0
    }

    /// Features of the default time-varying linear controller.
    fn features(&self) -> FeatureMap;
}

/// The three benchmark environments.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Lq(LqViapoints),
    Pendulum(Pendulum),
    Acrobot(Acrobot),
}

impl Env {
    fn inner(&self) -> &dyn Environment {
        match self {
            Env::Lq(e) => e,
            Env::Pendulum(e) => e,
            Env::Acrobot(e) => e,
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        self.inner().spec()
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner().drift(x, t, out)
    }

    fn control_effect(&self, x: &[f64], t: f64, a: &[f64], out: &mut [f64]) {
        self.inner().control_effect(x, t, a, out)
    }

    fn delta_cost(&self, index: usize, x: &[f64]) -> f64 {
        self.inner().delta_cost(index, x)
    }

    fn running_cost(&self, x: &[f64], t: f64) -> f64 {
        self.inner().running_cost(x, t)
    }

    fn features(&self) -> FeatureMap {
        self.inner().features()
    }
}

/// Environment selection plus parameter overrides. Omitted fields take the
/// benchmark defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvConfig {
    LqViapoints(LqParams),
    Pendulum(PendulumParams),
    Acrobot(AcrobotParams),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvConfig::LqViapoints(p) => Env::Lq(LqViapoints::new(p.clone())?),
            EnvConfig::Pendulum(p) => Env::Pendulum(Pendulum::new(p.clone())?),
            EnvConfig::Acrobot(p) => Env::Acrobot(Acrobot::new(p.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::LqViapoints(_) => "lq_viapoints",
            EnvConfig::Pendulum(_) => "pendulum",
            EnvConfig::Acrobot(_) => "acrobot",
        }
    }
}

fn check_state(x: &[f64], step: usize) -> Result<()> {
    let magnitude = x.iter().fold(0.0_f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    if !(magnitude <= BLOW_UP_LIMIT) {
        return Err(Error::BlowUp { step, magnitude });
    }
    Ok(())
}

fn step_into<E: Environment + ?Sized>(env: &E, x: &[f64], a: &[f64], k: usize, out: &mut [f64]) {
    let spec = env.spec();
    let t = k as f64 * spec.dt;
    let mut f = vec![0.0; spec.state_dim];
    let mut ga = vec![0.0; spec.state_dim];
    env.drift(x, t, &mut f);
    env.control_effect(x, t, a, &mut ga);
    for i in 0..spec.state_dim {
        out[i] = x[i] + spec.dt * (f[i] + ga[i]);
    }
}

/// One Euler step `x + dt (f(x, t_k) + g(x, t_k) a)` from grid step `k`.
pub fn step<E: Environment + ?Sized>(env: &E, x: &[f64], a: &[f64], k: usize) -> Result<Vec<f64>> {
    let spec = env.spec();
    if x.len() != spec.state_dim || a.len() != spec.action_dim {
        return Err(Error::Structural(format!(
            "state/action lengths {}/{} do not match environment {}/{}",
            x.len(),
            a.len(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    if k >= spec.steps() {
        return Err(Error::Domain(format!("step index {k} is past the horizon")));
    }
    let mut out = vec![0.0; spec.state_dim];
    step_into(env, x, a, k, &mut out);
    check_state(&out, k + 1)?;
    Ok(out)
}

fn check_compatible<E: Environment + ?Sized>(env: &E, policy: &GaussianPolicy) -> Result<()> {
    let spec = env.spec();
    if policy.action_dim() != spec.action_dim {
        return Err(Error::Structural(format!(
            "policy action dimension {} does not match environment {}",
            policy.action_dim(),
            spec.action_dim
        )));
    }
    if policy.dt() != spec.dt || policy.nu() != spec.nu {
        return Err(Error::Structural(format!(
            "policy noise (nu={}, dt={}) does not match environment (nu={}, dt={})",
            policy.nu(),
            policy.dt(),
            spec.nu,
            spec.dt
        )));
    }
    Ok(())
}

/// Rolls out `policy` with the given exploration noise (`steps * action_dim` values).
pub fn rollout_with_noise<E: Environment + ?Sized>(
    env: &E,
    policy: &GaussianPolicy,
    noise: &[f64],
) -> Result<Trajectory> {
    check_compatible(env, policy)?;
    let spec = env.spec();
    let (sd, ad, steps) = (spec.state_dim, spec.action_dim, spec.steps());
    if noise.len() != steps * ad {
        return Err(Error::Structural(format!(
            "noise has length {}, expected {}",
            noise.len(),
            steps * ad
        )));
    }

    let mut states = Vec::with_capacity((steps + 1) * sd);
    states.extend_from_slice(&spec.x0);
    let mut actions = vec![0.0; steps * ad];
    let mut noises = vec![0.0; steps * ad];
    let mut state_costs = vec![0.0; steps];
    let mut logp_policy = vec![0.0; steps];
    let mut logp_base = vec![0.0; steps];
    let mut u = vec![0.0; ad];
    let mut next = vec![0.0; sd];

    state_costs[0] += env.delta_cost(0, &spec.x0);
    for k in 0..steps {
        let x = &states[k * sd..(k + 1) * sd];
        policy.mean_into(x, k, &mut u);
        let a = &mut actions[k * ad..(k + 1) * ad];
        for j in 0..ad {
            a[j] = u[j] + noise[k * ad + j];
            noises[k * ad + j] = a[j] - u[j];
        }
        logp_policy[k] = policy.log_prob(a, x, k);
        logp_base[k] = policy.base_log_prob(a);
        state_costs[k] += env.running_cost(x, k as f64 * spec.dt) * spec.dt;
        step_into(env, x, a, k, &mut next);
        check_state(&next, k + 1)?;
        state_costs[k] += env.delta_cost(k + 1, &next);
        states.extend_from_slice(&next);
    }

    Trajectory::new(sd, ad, states, actions, noises, state_costs, logp_policy, logp_base)
}

/// Draws `steps * action_dim` i.i.d. `N(0, nu/dt)` values from `seed`.
pub fn sample_noise(spec: &EnvSpec, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, (spec.nu / spec.dt).sqrt()).expect("positive variance");
    let mut rng = seed::rng(seed);
    (0..spec.steps() * spec.action_dim)
        .map(|_| normal.sample(&mut rng))
        .collect()
}

/// One rollout with noise drawn from `seed`.
pub fn rollout<E: Environment + ?Sized>(env: &E, policy: &GaussianPolicy, seed: u64) -> Result<Trajectory> {
    rollout_with_noise(env, policy, &sample_noise(env.spec(), seed))
}

/// `n` independent rollouts; rollout `i` uses the derived seed `(seed, i)`.
pub fn sample_batch<E: Environment + ?Sized>(
    env: &E,
    policy: &GaussianPolicy,
    n: usize,
    seed: u64,
    gamma: f64,
) -> Result<RolloutBatch> {
    if n < 2 {
        return Err(Error::Domain(format!("a batch needs at least 2 rollouts, got {n}")));
    }
    check_compatible(env, policy)?;
    let trajectories = par::map_indexed(n, |i| {
        rollout(env, policy, seed::derive(seed, i as u64)).map_err(|e| Error::Rollout {
            index: i,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    RolloutBatch::new(trajectories, gamma)
}
