use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// The input is the state, optionally followed by the grid time `t` in seconds.
/// Parameters are stored layer by layer, each layer as a row-major weight matrix
/// `(out, in)` followed by its bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `[input_dim, hidden..., output_dim]`.
    pub sizes: Vec<usize>,
    /// Append the grid time to the state input.
    pub time_input: bool,
}

struct Forward {
    /// Layer activations; `acts[0]` is the input, the last entry is the output.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Network with `hidden` tanh layers mapping a `state_dim` state to `action_dim` outputs.
    pub fn new(state_dim: usize, hidden: &[usize], action_dim: usize, time_input: bool) -> Self {
        let mut sizes = vec![state_dim + usize::from(time_input)];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self { sizes, time_input }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least one layer")
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for w in self.sizes.windows(2) {
            offs.push(acc);
            acc += w[0] * w[1] + w[1];
        }
        offs
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params
    }

    fn input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut inp = x.to_vec();
        if self.time_input {
            inp.push(t);
        }
        inp
    }

    fn forward(&self, params: &[f64], x: &[f64], t: f64) -> Forward {
        let offs = self.layer_offsets();
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(self.input(x, t));
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offs[l]..offs[l] + n_in * n_out];
            let b = &params[offs[l] + n_in * n_out..offs[l] + n_in * n_out + n_out];
            let h = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    b[o] + w[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(h)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            let out = if l + 1 < layers {
                z.into_iter().map(f64::tanh).collect()
            } else {
                z
            };
            acts.push(out);
        }
        Forward { acts }
    }

    pub(crate) fn mean_into(&self, params: &[f64], x: &[f64], t: f64, out: &mut [f64]) {
        let fwd = self.forward(params, x, t);
        out.copy_from_slice(fwd.acts.last().unwrap());
    }

    /// Forward-mode product `J_u y` for a parameter-space tangent `y`.
    pub(crate) fn jvp_into(&self, params: &[f64], x: &[f64], t: f64, y: &[f64], out: &mut [f64]) {
        let fwd = self.forward(params, x, t);
        let offs = self.layer_offsets();
        let layers = self.sizes.len() - 1;
        let mut dh = vec![0.0; self.sizes[0]];
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offs[l]..offs[l] + n_in * n_out];
            let dw = &y[offs[l]..offs[l] + n_in * n_out];
            let db = &y[offs[l] + n_in * n_out..offs[l] + n_in * n_out + n_out];
            let h = &fwd.acts[l];
            let mut dz: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = o * n_in..(o + 1) * n_in;
                    db[o]
                        + w[row.clone()].iter().zip(&dh).map(|(a, b)| a * b).sum::<f64>()
                        + dw[row].iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                for (d, a) in dz.iter_mut().zip(&fwd.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            dh = dz;
        }
        out.copy_from_slice(&dh);
    }

    /// Reverse-mode accumulation `out += scale * J_u^T v`.
    pub(crate) fn vjp_into(
        &self,
        params: &[f64],
        x: &[f64],
        t: f64,
        v: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let fwd = self.forward(params, x, t);
        let offs = self.layer_offsets();
        let layers = self.sizes.len() - 1;
        // Gradient with respect to the pre-activation of the current layer.
        let mut gz: Vec<f64> = v.iter().map(|vi| scale * vi).collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let h = &fwd.acts[l];
            let base = offs[l];
            for o in 0..n_out {
                let g = gz[o];
                if g == 0.0 {
                    continue;
                }
                let row = &mut out[base + o * n_in..base + (o + 1) * n_in];
                for (r, hi) in row.iter_mut().zip(h) {
                    *r += g * hi;
                }
                out[base + n_in * n_out + o] += g;
            }
            if l == 0 {
                break;
            }
            let w = &params[base..base + n_in * n_out];
            let mut gh = vec![0.0; n_in];
            for o in 0..n_out {
                let g = gz[o];
                for (gi, wi) in gh.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *gi += g * wi;
                }
            }
            // Previous layer is a tanh hidden layer.
            for (gi, a) in gh.iter_mut().zip(h) {
                *gi *= 1.0 - a * a;
            }
            gz = gh;
        }
    }
}
