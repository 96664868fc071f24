use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::FeatureMap;

/// Time-varying linear feedback `u_j(x, t_k) = sum_m theta[k, j, m] * phi_m(x)`.
///
/// Parameters are laid out time-major: the block for step `k` is
/// `k * block_len .. (k + 1) * block_len` with `block_len = action_dim * feature_dim`,
/// and inside a block action-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingLinear {
    pub features: FeatureMap,
    pub steps: usize,
    pub action_dim: usize,
}

impl TimeVaryingLinear {
    pub fn new(features: FeatureMap, steps: usize, action_dim: usize) -> Self {
        Self {
            features,
            steps,
            action_dim,
        }
    }

    pub fn block_len(&self) -> usize {
        self.action_dim * self.features.dim()
    }

    pub fn param_count(&self) -> usize {
        self.steps * self.block_len()
    }

    pub fn block(&self, k: usize) -> Range<usize> {
        let len = self.block_len();
        k * len..(k + 1) * len
    }

    pub(crate) fn mean_into(&self, params: &[f64], x: &[f64], k: usize, out: &mut [f64]) {
        let phi = self.features.eval(x);
        let m = phi.len();
        let block = &params[self.block(k)];
        for (j, o) in out.iter_mut().enumerate() {
            *o = block[j * m..(j + 1) * m]
                .iter()
                .zip(&phi)
                .map(|(t, f)| t * f)
                .sum();
        }
    }

    pub(crate) fn jvp_into(&self, x: &[f64], k: usize, y: &[f64], out: &mut [f64]) {
        let phi = self.features.eval(x);
        let m = phi.len();
        let block = &y[self.block(k)];
        for (j, o) in out.iter_mut().enumerate() {
            *o = block[j * m..(j + 1) * m]
                .iter()
                .zip(&phi)
                .map(|(t, f)| t * f)
                .sum();
        }
    }

    pub(crate) fn vjp_into(&self, x: &[f64], k: usize, v: &[f64], scale: f64, out: &mut [f64]) {
        let phi = self.features.eval(x);
        let m = phi.len();
        let range = self.block(k);
        let block = &mut out[range];
        for (j, vj) in v.iter().enumerate() {
            let s = scale * vj;
            for (b, f) in block[j * m..(j + 1) * m].iter_mut().zip(&phi) {
                *b += s * f;
            }
        }
    }
}
