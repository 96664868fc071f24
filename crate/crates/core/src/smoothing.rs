//! Exponential weights of the smoothed-cost estimator and the adaptive choice of `alpha`.
//!
//! For costs `S^i` the weights are `w^i ∝ exp(-S^i / (gamma + alpha))`. Their entropy
//! `H_N(w)` gives the sample-size independent estimate `log N - H_N(w)` of
//! `KL(p*_alpha || p_theta)`, which is non-increasing in `alpha`. [`find_alpha`] returns
//! the smallest `alpha` whose estimate is at most the smoothing strength `delta`.

use crate::error::{Error, Result};

/// Weights and diagnostics at one value of `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingResult {
    pub alpha: f64,
    pub weights: Vec<f64>,
    /// `H_N(w)` in nats.
    pub entropy: f64,
    /// `log N - H_N(w)` in nats, clamped at zero.
    pub kl_estimate: f64,
}

const NORMALIZATION_TOL: f64 = 1e-9;

fn check_costs(costs: &[f64]) -> Result<()> {
    if costs.is_empty() {
        return Err(Error::Structural("empty cost vector".into()));
    }
    if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("cost {i} is not finite ({})", costs[i])));
    }
    Ok(())
}

fn temperature(gamma: f64, alpha: f64) -> Result<f64> {
    let temp = gamma + alpha;
    if !(temp > 0.0) || !temp.is_finite() {
        return Err(Error::Domain(format!(
            "gamma + alpha must be positive and finite, got {gamma} + {alpha}"
        )));
    }
    Ok(temp)
}

fn spread(costs: &[f64]) -> f64 {
    let (lo, hi) = costs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    hi - lo
}

fn min_cost(costs: &[f64]) -> f64 {
    costs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Normalized weights `w^i = exp(-S^i/(gamma+alpha)) / sum_j exp(-S^j/(gamma+alpha))`.
///
/// The minimum cost is subtracted before exponentiation, which leaves the weights
/// unchanged and keeps every exponent in `(-inf, 0]`.
pub fn normalized_weights(costs: &[f64], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    check_costs(costs)?;
    let temp = temperature(gamma, alpha)?;
    let shift = min_cost(costs);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - shift) / temp).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

/// `-sum w log w` with `0 log 0 = 0`.
pub fn weight_entropy(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Structural("empty weight vector".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Domain(format!(
            "weights must be non-negative and sum to 1 (sum = {total})"
        )));
    }
    Ok(-weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>())
}

/// Sample-size independent KL estimate `log N - H_N(w)`, clamped at zero.
pub fn kl_estimate(weights: &[f64]) -> Result<f64> {
    let h = weight_entropy(weights)?;
    Ok(((weights.len() as f64).ln() - h).max(0.0))
}

/// Weights, entropy and KL estimate at a fixed `alpha`.
pub fn smoothing_at(costs: &[f64], gamma: f64, alpha: f64) -> Result<SmoothingResult> {
    let weights = normalized_weights(costs, gamma, alpha)?;
    let entropy = weight_entropy(&weights)?;
    let kl_estimate = ((weights.len() as f64).ln() - entropy).max(0.0);
    Ok(SmoothingResult {
        alpha,
        weights,
        entropy,
        kl_estimate,
    })
}

/// Options for [`find_alpha`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSearch {
    /// Bisection stops once the bracket is narrower than `rel_tol * alpha`.
    pub rel_tol: f64,
    /// Cap on doubling plus bisection steps.
    pub max_steps: usize,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            max_steps: 400,
        }
    }
}

/// Smallest admissible `alpha`: zero when `gamma > 0`, otherwise a tiny positive value
/// so that `gamma + alpha > 0`.
pub fn alpha_floor(costs: &[f64], gamma: f64) -> f64 {
    if gamma > 0.0 {
        0.0
    } else {
        1e-8 * (spread(costs) + 1.0)
    }
}

/// Beyond this value the weights are uniform to machine precision.
pub fn alpha_ceiling(costs: &[f64]) -> f64 {
    1e12 * (spread(costs) + 1.0)
}

/// Smallest `alpha >= alpha_floor` with `kl_estimate(weights(alpha)) <= delta`.
///
/// Brackets by doubling from a scale-aware start, then bisects until the bracket is
/// within `opts.rel_tol` of its upper end. The returned `alpha` always satisfies the
/// constraint; when it is above the floor, `alpha * (1 - rel_tol)` violates it.
pub fn find_alpha(costs: &[f64], gamma: f64, delta: f64, opts: AlphaSearch) -> Result<SmoothingResult> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("smoothing strength must be positive, got {delta}")));
    }
    if costs.len() < 2 {
        return Err(Error::Structural("alpha search needs at least two samples".into()));
    }
    check_costs(costs)?;
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }

    let floor = alpha_floor(costs, gamma);
    let at_floor = smoothing_at(costs, gamma, floor)?;
    if at_floor.kl_estimate <= delta {
        return Ok(at_floor);
    }
    let ceiling = alpha_ceiling(costs);
    let kl = |alpha: f64| smoothing_at(costs, gamma, alpha).map(|r| r.kl_estimate);
    if kl(ceiling)? > delta {
        return Err(Error::Domain(format!(
            "no alpha up to {ceiling:e} satisfies KL <= {delta}"
        )));
    }

    let mut lo = floor;
    let mut hi = (2.0 * floor).max(1e-6 * (spread(costs) + gamma));
    let mut steps = 0;
    while kl(hi)? > delta {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if hi >= ceiling {
            hi = ceiling;
            break;
        }
        if steps > opts.max_steps {
            return Err(Error::Solver("alpha bracketing did not terminate".into()));
        }
    }
    while hi - lo > opts.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if kl(mid)? <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
        steps += 1;
        if steps > opts.max_steps {
            break;
        }
    }
    smoothing_at(costs, gamma, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn equal_costs_give_uniform_weights() {
        for (g, a) in [(1.0, 0.0), (0.0, 3.0), (2.0, 5.0)] {
            let w = normalized_weights(&[4.0, 4.0, 4.0], g, a).unwrap();
            for x in w {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_sample_softmax_ratio() {
        let (g, a) = (1.5, 2.0);
        let w = normalized_weights(&[0.0, (g + a) * LN_2], g, a).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn huge_alpha_flattens_weights() {
        let w = normalized_weights(&[0.0, 5.0, -3.0, 100.0], 1.0, 1e12).unwrap();
        for x in w {
            assert!((x - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_domain_errors() {
        assert!(matches!(normalized_weights(&[1.0, 2.0], 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(normalized_weights(&[1.0, f64::NAN], 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(weight_entropy(&[0.5, 0.6]), Err(Error::Domain(_))));
    }

    #[test]
    fn entropy_examples() {
        let uniform = vec![0.125; 8];
        assert!((weight_entropy(&uniform).unwrap() - 8f64.ln()).abs() < 1e-14);
        assert_eq!(weight_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((weight_entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5 * LN_2).abs() < 1e-14);
    }

    #[test]
    fn kl_estimate_extremes() {
        assert_eq!(kl_estimate(&[0.25; 4]).unwrap(), 0.0);
        let mut one_hot = vec![0.0; 100];
        one_hot[17] = 1.0;
        assert!((kl_estimate(&one_hot).unwrap() - 100f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn find_alpha_equal_costs_returns_floor() {
        let r = find_alpha(&[3.0; 10], 1.0, 0.1, AlphaSearch::default()).unwrap();
        assert_eq!(r.alpha, 0.0);
        let r = find_alpha(&[3.0; 10], 0.0, 0.1, AlphaSearch::default()).unwrap();
        assert_eq!(r.alpha, alpha_floor(&[3.0; 10], 0.0));
    }

    #[test]
    fn vacuous_delta_returns_floor() {
        let costs = [0.0, 50.0, 400.0, 1e4];
        let r = find_alpha(&costs, 1.0, 4f64.ln(), AlphaSearch::default()).unwrap();
        assert_eq!(r.alpha, 0.0);
    }

    /// Closed-form two-sample KL estimate, independent of the weight code path.
    fn two_sample_kl(gap: f64, temp: f64) -> f64 {
        let p = 1.0 / (1.0 + (-gap / temp).exp());
        let q = 1.0 - p;
        let h = -(p * p.ln() + if q > 0.0 { q * q.ln() } else { 0.0 });
        2f64.ln() - h
    }

    #[test]
    fn two_sample_alpha_matches_scalar_bisection() {
        let (gamma, delta) = (1.0, 0.1);
        let (mut lo, mut hi) = (0.0f64, 1e6f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if two_sample_kl(10.0, gamma + mid) <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = hi;
        let opts = AlphaSearch {
            rel_tol: 1e-10,
            ..AlphaSearch::default()
        };
        let r = find_alpha(&[0.0, 10.0], gamma, delta, opts).unwrap();
        assert!((r.alpha - oracle).abs() <= 1e-6 * oracle, "{} vs {}", r.alpha, oracle);
        assert!(r.kl_estimate <= delta);
    }

    #[test]
    fn find_alpha_rejects_bad_input() {
        assert!(find_alpha(&[1.0, 2.0], 1.0, 0.0, AlphaSearch::default()).is_err());
        assert!(find_alpha(&[1.0], 1.0, 0.5, AlphaSearch::default()).is_err());
        assert!(find_alpha(&[1.0, f64::INFINITY], 1.0, 0.5, AlphaSearch::default()).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(costs in prop::collection::vec(-50.0f64..50.0, 2..20), b in -1e3f64..1e3, alpha in 0.0f64..10.0) {
            let w1 = normalized_weights(&costs, 1.0, alpha).unwrap();
            let shifted: Vec<f64> = costs.iter().map(|c| c + b).collect();
            let w2 = normalized_weights(&shifted, 1.0, alpha).unwrap();
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn weights_are_a_distribution(costs in prop::collection::vec(-1e4f64..1e4, 1..40), alpha in 0.0f64..1e3) {
            let r = smoothing_at(&costs, 0.5, alpha).unwrap();
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.weights.iter().all(|w| (0.0..=1.0).contains(w)));
            let log_n = (costs.len() as f64).ln();
            prop_assert!(r.entropy >= 0.0 && r.entropy <= log_n + 1e-12);
            prop_assert!(r.kl_estimate >= 0.0 && r.kl_estimate <= log_n);
        }

        #[test]
        fn find_alpha_is_minimal(costs in prop::collection::vec(0.0f64..1e3, 2..50), frac in 0.05f64..0.9) {
            let delta = frac * (costs.len() as f64).ln();
            let opts = AlphaSearch::default();
            let r = find_alpha(&costs, 1.0, delta, opts).unwrap();
            prop_assert!(r.kl_estimate <= delta);
            if r.alpha > 0.0 {
                let below = smoothing_at(&costs, 1.0, r.alpha * (1.0 - opts.rel_tol)).unwrap();
                prop_assert!(below.kl_estimate > delta);
            }
        }
    }
}
