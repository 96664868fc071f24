//! Rollouts, rollout batches and the stochastic cost `S = V + gamma * log(p_u / p_0)`.
//!
//! Cost accumulation rule: delta-function state costs (viapoints, terminal costs) are
//! added once, without a `dt` factor, at the grid index `round(t_i / dt)`. A cost that
//! lands on grid index `j >= 1` evaluates `states[j]` and is booked in
//! `state_costs[j - 1]`, the step that produced that state; a cost at index 0 is booked
//! in `state_costs[0]`. Running costs are booked as `V(x_k, t_k) * dt` in
//! `state_costs[k]`. Only the sum over steps enters the estimators.

use crate::error::{Error, Result};

/// One rollout.
///
/// `states` holds `steps + 1` state vectors (including `x_0`); every per-step sequence
/// holds exactly `steps` entries. Vectors are stored flat with a fixed stride.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    noises: Vec<f64>,
    state_costs: Vec<f64>,
    logp_policy: Vec<f64>,
    logp_base: Vec<f64>,
}

impl Trajectory {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        noises: Vec<f64>,
        state_costs: Vec<f64>,
        logp_policy: Vec<f64>,
        logp_base: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Structural("state and action dimensions must be positive".into()));
        }
        let steps = state_costs.len();
        let checks = [
            ("states", states.len(), (steps + 1) * state_dim),
            ("actions", actions.len(), steps * action_dim),
            ("noises", noises.len(), steps * action_dim),
            ("logp_policy", logp_policy.len(), steps),
            ("logp_base", logp_base.len(), steps),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Structural(format!(
                    "{name} has length {got}, expected {want} for {steps} steps"
                )));
            }
        }
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
            noises,
            state_costs,
            logp_policy,
            logp_base,
        })
    }

    /// Number of control steps.
    pub fn steps(&self) -> usize {
        self.state_costs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// State at grid index `k` (`0..=steps`).
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn action(&self, k: usize) -> &[f64] {
        &self.actions[k * self.action_dim..(k + 1) * self.action_dim]
    }

    pub fn noise(&self, k: usize) -> &[f64] {
        &self.noises[k * self.action_dim..(k + 1) * self.action_dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.steps())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state_costs(&self) -> &[f64] {
        &self.state_costs
    }

    pub fn logp_policy(&self) -> &[f64] {
        &self.logp_policy
    }

    pub fn logp_base(&self) -> &[f64] {
        &self.logp_base
    }

    /// Total state cost `V(tau)`.
    pub fn state_cost_total(&self) -> f64 {
        self.state_costs.iter().sum()
    }
}

/// `sum_k state_costs[k] + gamma * (logp_policy[k] - logp_base[k])`.
pub fn stochastic_cost_from_parts(
    state_costs: &[f64],
    logp_policy: &[f64],
    logp_base: &[f64],
    gamma: f64,
) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    if state_costs.len() != logp_policy.len() || state_costs.len() != logp_base.len() {
        return Err(Error::Structural(format!(
            "cost/log-prob length mismatch: {} costs, {} policy log-probs, {} base log-probs",
            state_costs.len(),
            logp_policy.len(),
            logp_base.len()
        )));
    }
    Ok(state_costs
        .iter()
        .zip(logp_policy.iter().zip(logp_base))
        .map(|(v, (lp, lb))| v + gamma * (lp - lb))
        .sum())
}

/// Stochastic cost `S^gamma(tau)` of one trajectory.
pub fn stochastic_cost(traj: &Trajectory, gamma: f64) -> Result<f64> {
    stochastic_cost_from_parts(&traj.state_costs, &traj.logp_policy, &traj.logp_base, gamma)
}

/// Arithmetic mean of a cost sample.
pub fn mean_cost(costs: &[f64]) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::Structural("mean of an empty cost sample".into()));
    }
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Monte Carlo estimate of the regularized expected cost.
pub fn batch_mean_cost(batch: &RolloutBatch) -> Result<f64> {
    mean_cost(&batch.stochastic_costs)
}

/// A batch of rollouts drawn under one policy, with their cached stochastic costs.
///
/// The cache is recomputable from the stored sequences at any time via
/// [`RolloutBatch::recompute_costs`].
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    trajectories: Vec<Trajectory>,
    gamma: f64,
    stochastic_costs: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(trajectories: Vec<Trajectory>, gamma: f64) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Structural("a rollout batch needs at least one trajectory".into()));
        }
        let first = &trajectories[0];
        let shape = (first.steps(), first.state_dim(), first.action_dim());
        if let Some(i) = trajectories
            .iter()
            .position(|t| (t.steps(), t.state_dim(), t.action_dim()) != shape)
        {
            return Err(Error::Structural(format!(
                "trajectory {i} has a different shape from trajectory 0"
            )));
        }
        let stochastic_costs = trajectories
            .iter()
            .map(|t| stochastic_cost(t, gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trajectories,
            gamma,
            stochastic_costs,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn stochastic_costs(&self) -> &[f64] {
        &self.stochastic_costs
    }

    pub fn steps(&self) -> usize {
        self.trajectories[0].steps()
    }

    pub fn recompute_costs(&self) -> Result<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|t| stochastic_cost(t, self.gamma))
            .collect()
    }

    /// Population standard deviation of the stochastic costs.
    pub fn cost_std(&self) -> f64 {
        let n = self.stochastic_costs.len() as f64;
        let mean = self.stochastic_costs.iter().sum::<f64>() / n;
        let var = self
            .stochastic_costs
            .iter()
            .map(|s| (s - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }
}
