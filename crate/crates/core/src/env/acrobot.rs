use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment};
use crate::error::Result;
use crate::policy::FeatureMap;

/// Two-link underactuated arm with torque on the second joint.
///
/// `d11 x1dd + d12 x2dd + h1 + phi1 = 0` and
/// `d12 x1dd + d22 x2dd + h2 + phi2 = lambda (u + xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcrobotParams {
    pub gravity: f64,
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub lambda: f64,
    pub dt: f64,
    pub horizon: f64,
    pub nu: f64,
    /// Initial `(x1, x2, x1dot, x2dot)`.
    pub x0: [f64; 4],
    /// Terminal cost `-height_weight * Y + velocity_weight * (x1dot^2 + x2dot^2)`.
    pub height_weight: f64,
    pub velocity_weight: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            l1: 1.0,
            l2: 2.0,
            m1: 1.0,
            m2: 1.0,
            lc1: 0.5,
            lc2: 1.0,
            i1: 0.083,
            i2: 0.33,
            lambda: 0.2,
            dt: 0.01,
            horizon: 3.0,
            nu: 1.0,
            x0: [-FRAC_PI_2, 0.0, 0.0, 0.0],
            height_weight: 500.0,
            velocity_weight: 10.0,
        }
    }
}

/// Mass matrix entries `(d11, d12, d22)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassMatrix {
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl MassMatrix {
    pub fn det(&self) -> f64 {
        self.d11 * self.d22 - self.d12 * self.d12
    }

    /// Solves `M z = r` with the closed-form 2x2 inverse.
    pub fn solve(&self, r: [f64; 2]) -> [f64; 2] {
        let det = self.det();
        debug_assert!(det > 0.0, "acrobot mass matrix is singular");
        [
            (self.d22 * r[0] - self.d12 * r[1]) / det,
            (self.d11 * r[1] - self.d12 * r[0]) / det,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acrobot {
    params: AcrobotParams,
    spec: EnvSpec,
}

impl Acrobot {
    pub fn new(params: AcrobotParams) -> Result<Self> {
        let spec = EnvSpec::new(4, 1, params.dt, params.horizon, params.nu, params.x0.to_vec())?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &AcrobotParams {
        &self.params
    }

    pub fn mass_matrix(&self, x: &[f64]) -> MassMatrix {
        let p = &self.params;
        let c2 = x[1].cos();
        MassMatrix {
            d11: p.m1 * p.lc1 * p.lc1
                + p.m2 * (p.l1 * p.l1 + p.lc2 * p.lc2 + 2.0 * p.l1 * p.lc2 * c2)
                + p.i1
                + p.i2,
            d12: p.m2 * (p.lc2 * p.lc2 + p.l1 * p.lc2 * c2) + p.i2,
            d22: p.m2 * p.lc2 * p.lc2 + p.i2,
        }
    }

    /// Coriolis/centrifugal terms `(h1, h2)`.
    pub fn coriolis(&self, x: &[f64]) -> [f64; 2] {
        let p = &self.params;
        let k = p.m2 * p.l1 * p.lc2 * x[1].sin();
        let (v1, v2) = (x[2], x[3]);
        [-k * (v2 * v2 + 2.0 * v1 * v2), k * v1 * v1]
    }

    /// Gravity terms `(phi1, phi2)`.
    pub fn gravity_terms(&self, x: &[f64]) -> [f64; 2] {
        let p = &self.params;
        let phi2 = p.m2 * p.lc2 * p.gravity * (x[0] + x[1]).cos();
        let phi1 = (p.m1 * p.lc1 + p.m2 * p.l1) * p.gravity * x[0].cos() + phi2;
        [phi1, phi2]
    }

    /// Joint accelerations for a given joint-2 torque input `u + xi`.
    pub fn accelerations(&self, x: &[f64], action: f64) -> [f64; 2] {
        let h = self.coriolis(x);
        let phi = self.gravity_terms(x);
        self.mass_matrix(x).solve([
            -h[0] - phi[0],
            -h[1] - phi[1] + self.params.lambda * action,
        ])
    }

    /// Tip height `Y = -l1 cos x1 - l2 cos(x1 + x2)`.
    pub fn height(&self, x: &[f64]) -> f64 {
        -self.params.l1 * x[0].cos() - self.params.l2 * (x[0] + x[1]).cos()
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        -self.params.height_weight * self.height(x)
            + self.params.velocity_weight * (x[2] * x[2] + x[3] * x[3])
    }
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let acc = self.accelerations(x, 0.0);
        out[0] = x[2];
        out[1] = x[3];
        out[2] = acc[0];
        out[3] = acc[1];
    }

    fn control_effect(&self, x: &[f64], _t: f64, a: &[f64], out: &mut [f64]) {
        let acc = self.mass_matrix(x).solve([0.0, self.params.lambda * a[0]]);
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = acc[0];
        out[3] = acc[1];
    }

    fn delta_cost(&self, index: usize, x: &[f64]) -> f64 {
        if index == self.spec.steps() {
            self.terminal_cost(x)
        } else {
            0.0
        }
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::Acrobot
    }
}
