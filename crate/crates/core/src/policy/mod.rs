//! Gaussian policies `pi_theta(a | x, t) = N(a | u_theta(x, t), nu/dt)` with a static
//! variance. Only the mean is parametrized.

mod features;
mod linear;
mod mlp;

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::FeatureMap;
pub use linear::TimeVaryingLinear;
pub use mlp::Mlp;

/// Parametrized family for the policy mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum MeanModel {
    Linear(TimeVaryingLinear),
    Mlp(Mlp),
}

impl MeanModel {
    pub fn param_count(&self) -> usize {
        match self {
            MeanModel::Linear(m) => m.param_count(),
            MeanModel::Mlp(m) => m.param_count(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            MeanModel::Linear(m) => m.action_dim,
            MeanModel::Mlp(m) => m.output_dim(),
        }
    }

    /// Shape header used for checkpoints.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            MeanModel::Linear(m) => vec![m.steps, m.action_dim, m.features.dim()],
            MeanModel::Mlp(m) => m.sizes.clone(),
        }
    }
}

/// A Gaussian policy: mean model, parameter vector and action variance `nu/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    model: MeanModel,
    params: Vec<f64>,
    nu: f64,
    dt: f64,
}

impl GaussianPolicy {
    pub fn new(model: MeanModel, params: Vec<f64>, nu: f64, dt: f64) -> Result<Self> {
        if !(nu > 0.0) || !(dt > 0.0) {
            return Err(Error::Domain(format!("need nu > 0 and dt > 0, got nu={nu}, dt={dt}")));
        }
        if params.len() != model.param_count() {
            return Err(Error::Structural(format!(
                "model expects {} parameters, got {}",
                model.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            model,
            params,
            nu,
            dt,
        })
    }

    /// Policy with all parameters zero.
    pub fn zeros(model: MeanModel, nu: f64, dt: f64) -> Result<Self> {
        let n = model.param_count();
        Self::new(model, vec![0.0; n], nu, dt)
    }

    /// Same model and variance with new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::new(self.model.clone(), params, self.nu, self.dt)
    }

    pub fn model(&self) -> &MeanModel {
        &self.model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Action variance `nu / dt`.
    pub fn variance(&self) -> f64 {
        self.nu / self.dt
    }

    /// Precision `dt / nu`.
    pub fn precision(&self) -> f64 {
        self.dt / self.nu
    }

    /// Same model, parameters and variance.
    pub fn is_compatible(&self, other: &GaussianPolicy) -> bool {
        self.model == other.model && self.nu == other.nu && self.dt == other.dt
    }

    pub fn mean_into(&self, x: &[f64], k: usize, out: &mut [f64]) {
        match &self.model {
            MeanModel::Linear(m) => m.mean_into(&self.params, x, k, out),
            MeanModel::Mlp(m) => m.mean_into(&self.params, x, k as f64 * self.dt, out),
        }
    }

    /// Mean action `u_theta(x, t_k)` at grid step `k`.
    pub fn mean(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.action_dim()];
        self.mean_into(x, k, &mut out);
        out
    }

    fn gaussian_log_density(&self, residual_sq: f64, dim: usize) -> f64 {
        -0.5 * residual_sq * self.precision() - 0.5 * dim as f64 * (2.0 * PI * self.variance()).ln()
    }

    /// `log pi_theta(a | x, t_k)`.
    pub fn log_prob(&self, a: &[f64], x: &[f64], k: usize) -> f64 {
        let u = self.mean(x, k);
        let r2: f64 = a.iter().zip(&u).map(|(a, u)| (a - u).powi(2)).sum();
        self.gaussian_log_density(r2, a.len())
    }

    /// Log-density of the uncontrolled base policy `N(0, nu/dt)`.
    pub fn base_log_prob(&self, a: &[f64]) -> f64 {
        let r2: f64 = a.iter().map(|a| a * a).sum();
        self.gaussian_log_density(r2, a.len())
    }

    /// `out += scale * grad_theta log pi_theta(a | x, t_k)`.
    pub fn score_into(&self, a: &[f64], x: &[f64], k: usize, scale: f64, out: &mut [f64]) {
        let u = self.mean(x, k);
        let v: Vec<f64> = a.iter().zip(&u).map(|(a, u)| a - u).collect();
        self.vjp_into(x, k, &v, scale * self.precision(), out);
    }

    /// `grad_theta log pi_theta(a | x, t_k) = (dt/nu) J_u^T (a - u)`.
    pub fn score(&self, a: &[f64], x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        self.score_into(a, x, k, 1.0, &mut out);
        out
    }

    /// `J_u y` where `J_u` is the Jacobian of the mean with respect to the parameters.
    pub fn jvp(&self, x: &[f64], k: usize, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.param_count() {
            return Err(Error::Structural(format!(
                "tangent has length {}, policy has {} parameters",
                y.len(),
                self.param_count()
            )));
        }
        let mut out = vec![0.0; self.action_dim()];
        match &self.model {
            MeanModel::Linear(m) => m.jvp_into(x, k, y, &mut out),
            MeanModel::Mlp(m) => m.jvp_into(&self.params, x, k as f64 * self.dt, y, &mut out),
        }
        Ok(out)
    }

    /// `out += scale * J_u^T v` for an action-space vector `v`.
    pub fn vjp_into(&self, x: &[f64], k: usize, v: &[f64], scale: f64, out: &mut [f64]) {
        match &self.model {
            MeanModel::Linear(m) => m.vjp_into(x, k, v, scale, out),
            MeanModel::Mlp(m) => {
                m.vjp_into(&self.params, x, k as f64 * self.dt, v, scale, out)
            }
        }
    }

    /// `J_u^T v` as a fresh vector.
    pub fn vjp(&self, x: &[f64], k: usize, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.action_dim() {
            return Err(Error::Structural(format!(
                "cotangent has length {}, action dimension is {}",
                v.len(),
                self.action_dim()
            )));
        }
        let mut out = vec![0.0; self.param_count()];
        self.vjp_into(x, k, v, 1.0, &mut out);
        Ok(out)
    }

    /// Parameter range and feature vector of the time block for step `k`, if the mean
    /// decomposes by time step.
    pub fn time_block(&self, x: &[f64], k: usize) -> Option<(Range<usize>, Vec<f64>)> {
        match &self.model {
            MeanModel::Linear(m) => Some((m.block(k), m.features.eval(x))),
            MeanModel::Mlp(_) => None,
        }
    }

    pub fn checkpoint(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            shape: self.model.shape(),
            params: self.params.clone(),
        }
    }
}

/// Flat parameter vector with a shape header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub shape: Vec<usize>,
    pub params: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ASPP";

impl ParamCheckpoint {
    /// Little-endian binary form: magic, `u32` rank, `u64` dims, `u64` count, `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.shape.len() + self.params.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for d in &self.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Structural("truncated or malformed parameter checkpoint".into());
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad());
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let params = (0..count)
            .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape, params })
    }
}
