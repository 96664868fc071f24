//! Sweeps over the smoothing strength, the batch size, or the smoothing strength
//! crossed with the trust-region size.

use serde::{Deserialize, Serialize};

use super::{run_aspic, DeltaSpec, ExperimentConfig, RunResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta,
    N,
    /// `delta x epsilon`.
    Grid,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepAxis::Delta),
            "n" => Ok(SweepAxis::N),
            "grid" => Ok(SweepAxis::Grid),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

/// One sweep point with its runs and aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub delta: Option<DeltaSpec>,
    pub n_rollouts: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub config_hash: String,
    pub runs: Vec<RunResult>,
    /// Set when the cell could not be run at all.
    pub error: Option<String>,
    /// Iterations to `cost_threshold` over the runs that reached it.
    pub iterations_to_threshold: Option<Stat>,
    /// Runs that reached `cost_threshold`.
    pub reached: usize,
    /// Final batch mean cost over runs with at least one record.
    pub final_cost: Option<Stat>,
}

impl SweepCell {
    /// Iterations to threshold per run, `None` where the threshold was never reached.
    pub fn iterations_per_run(&self, threshold: f64) -> Vec<Option<usize>> {
        self.runs.iter().map(|r| r.iterations_to_threshold(threshold)).collect()
    }

    pub fn any_failed(&self) -> bool {
        self.error.is_some() || self.runs.iter().any(RunResult::failed)
    }
}

/// Configs of every cell, in sweep order.
pub fn cell_configs(template: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<ExperimentConfig>> {
    let values = &template.sweep;
    let need = |empty: bool, name: &str| {
        if empty {
            Err(Error::Config(format!("sweep needs a non-empty `sweep.{name}` list")))
        } else {
            Ok(())
        }
    };
    let mut out = Vec::new();
    match axis {
        SweepAxis::Delta => {
            need(values.delta.is_empty(), "delta")?;
            for d in &values.delta {
                let mut c = template.clone();
                c.delta = Some(*d);
                out.push(c);
            }
        }
        SweepAxis::N => {
            need(values.n.is_empty(), "n")?;
            for &n in &values.n {
                let mut c = template.clone();
                c.n_rollouts = n;
                if let Some(budget) = template.rollout_budget {
                    c.iterations = budget / n.max(1);
                }
                out.push(c);
            }
        }
        SweepAxis::Grid => {
            need(values.delta.is_empty(), "delta")?;
            need(values.epsilon.is_empty(), "epsilon")?;
            for d in &values.delta {
                for &e in &values.epsilon {
                    let mut c = template.clone();
                    c.delta = Some(*d);
                    c.epsilon = e;
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

fn run_cell(index: usize, config: &ExperimentConfig) -> SweepCell {
    let (runs, error) = match run_aspic(config) {
        Ok(runs) => (runs, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let reached_iters: Vec<f64> = config
        .cost_threshold
        .map(|c| runs.iter().filter_map(|r| r.iterations_to_threshold(c)).map(|i| i as f64).collect())
        .unwrap_or_default();
    let finals: Vec<f64> = runs.iter().filter_map(RunResult::final_cost).collect();
    SweepCell {
        index,
        delta: config.delta,
        n_rollouts: config.n_rollouts,
        epsilon: config.epsilon,
        iterations: config.iterations,
        config_hash: config.content_hash(),
        reached: reached_iters.len(),
        iterations_to_threshold: Stat::of(&reached_iters),
        final_cost: Stat::of(&finals),
        runs,
        error,
    }
}

/// Runs every cell of the sweep. A cell that fails is recorded and the sweep goes on.
pub fn sweep(template: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<SweepCell>> {
    let configs = cell_configs(template, axis)?;
    Ok(configs.iter().enumerate().map(|(i, c)| run_cell(i, c)).collect())
}
