use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment};
use crate::error::Result;
use crate::policy::FeatureMap;

/// `xddot + damping * xdot + omega0_sq * sin(x) = lambda * (u + xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    /// `c * omega0` in 1/s.
    pub damping: f64,
    /// `omega0^2` in 1/s^2.
    pub omega0_sq: f64,
    pub lambda: f64,
    pub dt: f64,
    pub horizon: f64,
    pub nu: f64,
    /// Initial `(x, xdot)`.
    pub x0: [f64; 2],
    /// Terminal cost `-height_weight * Y + velocity_weight * xdot^2`, `Y = -cos x`.
    pub height_weight: f64,
    pub velocity_weight: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            omega0_sq: 10.0,
            lambda: 0.2,
            dt: 0.01,
            horizon: 3.0,
            nu: 1.0,
            x0: [0.0, 0.0],
            height_weight: 500.0,
            velocity_weight: 10.0,
        }
    }
}

/// Damped pendulum swing-up, state `(x, xdot)` with `x = 0` hanging down.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    params: PendulumParams,
    spec: EnvSpec,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        let spec = EnvSpec::new(2, 1, params.dt, params.horizon, params.nu, params.x0.to_vec())?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    /// Tip height `Y = -cos x`.
    pub fn height(x: &[f64]) -> f64 {
        -x[0].cos()
    }

    /// Undamped energy `xdot^2 / 2 - omega0^2 cos x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1] - self.params.omega0_sq * x[0].cos()
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        -self.params.height_weight * Self::height(x) + self.params.velocity_weight * x[1] * x[1]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[1];
        out[1] = -self.params.damping * x[1] - self.params.omega0_sq * x[0].sin();
    }

    fn control_effect(&self, _x: &[f64], _t: f64, a: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.params.lambda * a[0];
    }

    fn delta_cost(&self, index: usize, x: &[f64]) -> f64 {
        if index == self.spec.steps() {
            self.terminal_cost(x)
        } else {
            0.0
        }
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::Pendulum
    }
}
