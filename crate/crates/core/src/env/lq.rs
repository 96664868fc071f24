use serde::{Deserialize, Serialize};

use super::{grid_index, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::policy::FeatureMap;

/// A quadratic viapoint penalty `(x - target)^2 / (2 sigma^2)` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viapoint {
    pub time: f64,
    pub target: f64,
}

/// Parameters of the Brownian viapoint task `dx = (u + xi) dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub dt: f64,
    pub horizon: f64,
    pub nu: f64,
    pub x0: f64,
    pub sigma: f64,
    pub viapoints: Vec<Viapoint>,
}

impl Default for LqParams {
    fn default() -> Self {
        let points = [
            (1.0, -10.0),
            (2.0, 10.0),
            (3.0, -10.0),
            (4.0, -20.0),
            (5.0, -100.0),
            (6.0, -50.0),
            (7.0, 10.0),
            (8.0, 20.0),
            (9.0, 30.0),
        ];
        Self {
            dt: 0.1,
            horizon: 10.0,
            nu: 1.0,
            x0: 0.0,
            sigma: 0.1,
            viapoints: points
                .iter()
                .map(|&(time, target)| Viapoint { time, target })
                .collect(),
        }
    }
}

/// One-dimensional controlled Brownian particle that must pass through viapoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LqViapoints {
    params: LqParams,
    spec: EnvSpec,
    /// `(grid index, target)` per viapoint.
    events: Vec<(usize, f64)>,
}

impl LqViapoints {
    pub fn new(params: LqParams) -> Result<Self> {
        if !(params.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", params.sigma)));
        }
        let spec = EnvSpec::new(1, 1, params.dt, params.horizon, params.nu, vec![params.x0])?;
        let events = params
            .viapoints
            .iter()
            .map(|v| {
                let idx = grid_index(v.time, params.dt);
                if idx > spec.steps() || v.time < 0.0 {
                    return Err(Error::Config(format!("viapoint time {} outside the horizon", v.time)));
                }
                Ok((idx, v.target))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            spec,
            events,
        })
    }

    pub fn params(&self) -> &LqParams {
        &self.params
    }

    /// State cost of a path that sits still at `x0` with no noise.
    pub fn resting_cost(&self) -> f64 {
        let x0 = self.params.x0;
        self.events
            .iter()
            .map(|(_, target)| (x0 - target).powi(2) / (2.0 * self.params.sigma.powi(2)))
            .sum()
    }
}

impl Environment for LqViapoints {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn drift(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn control_effect(&self, _x: &[f64], _t: f64, a: &[f64], out: &mut [f64]) {
        out[0] = a[0];
    }

    fn delta_cost(&self, index: usize, x: &[f64]) -> f64 {
        let two_s2 = 2.0 * self.params.sigma * self.params.sigma;
        self.events
            .iter()
            .filter(|(i, _)| *i == index)
            .map(|(_, target)| (x[0] - target).powi(2) / two_s2)
            .sum()
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::Affine { state_dim: 1 }
    }
}
