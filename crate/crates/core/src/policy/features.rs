use serde::{Deserialize, Serialize};

/// Feature maps `phi(x)` for time-varying linear feedback controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureMap {
    /// `[x_1, ..., x_d, 1]`.
    Affine { state_dim: usize },
    /// Pendulum state `(x, xdot)`: `[cos x, sin x, xdot, 1]`.
    Pendulum,
    /// Acrobot state `(x1, x2, x1dot, x2dot)`:
    /// `[cos x1, sin x2, cos x2, sin x2, sin(x1+x2), cos(x1+x2), x1dot, x2dot, 1]`.
    ///
    /// `sin x2` appears twice, as in the reference controller. The duplicate makes the
    /// per-timestep Fisher block singular, which the pseudo-inverse and CG damping absorb.
    Acrobot,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Affine { state_dim } => state_dim + 1,
            FeatureMap::Pendulum => 4,
            FeatureMap::Acrobot => 9,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FeatureMap::Affine { state_dim } => *state_dim,
            FeatureMap::Pendulum => 2,
            FeatureMap::Acrobot => 4,
        }
    }

    /// Writes `phi(x)` into `out` (length [`FeatureMap::dim`]).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Affine { state_dim } => {
                out[..*state_dim].copy_from_slice(&x[..*state_dim]);
                out[*state_dim] = 1.0;
            }
            FeatureMap::Pendulum => {
                out[0] = x[0].cos();
                out[1] = x[0].sin();
                out[2] = x[1];
                out[3] = 1.0;
            }
            FeatureMap::Acrobot => {
                let (x1, x2) = (x[0], x[1]);
                out[0] = x1.cos();
                out[1] = x2.sin();
                out[2] = x2.cos();
                out[3] = x2.sin();
                out[4] = (x1 + x2).sin();
                out[5] = (x1 + x2).cos();
                out[6] = x[2];
                out[7] = x[3];
                out[8] = 1.0;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}
