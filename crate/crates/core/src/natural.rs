//! Natural-gradient trust-region updates.
//!
//! For a Gaussian policy with fixed variance `nu/dt` the Fisher information of the
//! path distribution is `F = (dt/nu) E[sum_t J_u^T J_u]`, with `J_u` the Jacobian of
//! the policy mean with respect to the parameters. It is applied matrix-free from a
//! batch, inverted either with truncated conjugate gradient or, for time-varying linear
//! policies whose `F` is block diagonal in time, with a per-step pseudo-inverse. The
//! step size is then tuned so that the sample KL between the old and new policy on the
//! current batch hits the trust-region size.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::check_batch;
use crate::par;
use crate::policy::GaussianPolicy;
use crate::trajectory::RolloutBatch;

/// Relative residual at which conjugate gradient stops early.
pub const CG_TOL: f64 = 1e-10;
/// Damping `lambda = CG_DAMPING * trace(F) / dim` added before conjugate gradient.
pub const CG_DAMPING: f64 = 1e-6;
/// Natural directions shorter than this are treated as converged.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;
/// Line search accepts `|kl - epsilon| <= KL_TOLERANCE * epsilon`.
pub const KL_TOLERANCE: f64 = 0.1;
const MAX_BRACKET_STEPS: usize = 50;
const MAX_BISECTION_STEPS: usize = 200;

/// How the natural direction `F^-1 g` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SolverKind {
    /// Damped conjugate gradient with a fixed iteration budget, either on the full
    /// Fisher operator or separately on each time block.
    Cg {
        iters: usize,
        #[serde(default)]
        per_timestep: bool,
    },
    /// Pseudo-inverse of each time block, singular values below `rcond * max` dropped.
    PerTimestepPinv { rcond: f64 },
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Cg { per_timestep: false, .. } => "cg",
            SolverKind::Cg { per_timestep: true, .. } => "cg_per_timestep",
            SolverKind::PerTimestepPinv { .. } => "per_timestep_pinv",
        }
    }
}

/// Estimate of `KL(old || new)` that the step-size search drives to the trust-region size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// Log-ratio at the sampled actions, [`sample_policy_kl`].
    #[default]
    Sampled,
    /// Closed-form Gaussian KL at the sampled states, [`expected_policy_kl`].
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionUpdate {
    pub new_params: Vec<f64>,
    pub eta: f64,
    pub achieved_kl: f64,
    /// Total conjugate-gradient iterations, summed over blocks for the per-step variant.
    pub cg_iterations: Option<usize>,
    pub solver_kind: SolverKind,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ordered_sum(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// `(1/N) sum_i sum_t [log pi_old(a_t^i) - log pi_new(a_t^i)]` on a batch drawn from
/// `old`. Not clamped; sampling noise can make it slightly negative.
pub fn sample_policy_kl(batch: &RolloutBatch, old: &GaussianPolicy, new: &GaussianPolicy) -> Result<f64> {
    if !old.is_compatible(new) {
        return Err(Error::Structural("policies differ in model or noise level".into()));
    }
    check_batch(batch, old)?;
    let per_traj = par::map_indexed(batch.len(), |i| {
        let t = &batch.trajectories()[i];
        (0..t.steps())
            .map(|k| old.log_prob(t.action(k), t.state(k), k) - new.log_prob(t.action(k), t.state(k), k))
            .sum::<f64>()
    });
    Ok(per_traj.iter().sum::<f64>() / batch.len() as f64)
}

/// `(1/N) sum_i sum_t (dt / 2 nu) |u_old(x_t^i) - u_new(x_t^i)|^2`: the action noise of
/// [`sample_policy_kl`] integrated out, leaving only the state sampling.
pub fn expected_policy_kl(batch: &RolloutBatch, old: &GaussianPolicy, new: &GaussianPolicy) -> Result<f64> {
    if !old.is_compatible(new) {
        return Err(Error::Structural("policies differ in model or noise level".into()));
    }
    check_batch(batch, old)?;
    let ad = old.action_dim();
    let half_precision = 0.5 * old.precision();
    let per_traj = par::map_indexed(batch.len(), |i| {
        let t = &batch.trajectories()[i];
        let (mut u0, mut u1) = (vec![0.0; ad], vec![0.0; ad]);
        let mut acc = 0.0;
        for k in 0..t.steps() {
            old.mean_into(t.state(k), k, &mut u0);
            new.mean_into(t.state(k), k, &mut u1);
            acc += u0.iter().zip(&u1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        half_precision * acc
    });
    Ok(per_traj.iter().sum::<f64>() / batch.len() as f64)
}

/// `F y = (dt/nu) (1/N) sum_i sum_t J_u^T J_u y`.
pub fn fisher_vector_product(batch: &RolloutBatch, policy: &GaussianPolicy, y: &[f64]) -> Result<Vec<f64>> {
    let p = policy.param_count();
    if y.len() != p {
        return Err(Error::Structural(format!("vector has length {}, policy has {p} parameters", y.len())));
    }
    check_batch(batch, policy)?;
    let scale = policy.precision() / batch.len() as f64;
    let parts = par::map_indexed(batch.len(), |i| {
        let t = &batch.trajectories()[i];
        let mut out = vec![0.0; p];
        for k in 0..t.steps() {
            let jy = policy.jvp(t.state(k), k, y).expect("length checked");
            policy.vjp_into(t.state(k), k, &jy, scale, &mut out);
        }
        out
    });
    Ok(ordered_sum(parts, p))
}

/// `trace(F)`, the squared Frobenius norm of the scaled mean Jacobians.
pub fn fisher_trace(batch: &RolloutBatch, policy: &GaussianPolicy) -> Result<f64> {
    check_batch(batch, policy)?;
    let ad = policy.action_dim();
    let per_traj = par::map_indexed(batch.len(), |i| {
        let t = &batch.trajectories()[i];
        let mut acc = 0.0;
        let mut e = vec![0.0; ad];
        for k in 0..t.steps() {
            for j in 0..ad {
                e.fill(0.0);
                e[j] = 1.0;
                let row = policy.vjp(t.state(k), k, &e).expect("length checked");
                acc += dot(&row, &row);
            }
        }
        acc
    });
    Ok(policy.precision() * per_traj.iter().sum::<f64>() / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Solves `A x = b` for a symmetric positive semi-definite operator, starting at zero.
///
/// Stops when `||A x - b|| <= tol * ||b||`, after `max_iters` iterations, or when the
/// search direction has no positive curvature.
pub fn conjugate_gradient<F>(mut apply_a: F, b: &[f64], max_iters: usize, tol: f64) -> Result<CgSolution>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("right-hand side is not finite".into()));
    }
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let target = tol * rs.sqrt();
    let mut iterations = 0;
    while iterations < max_iters && rs.sqrt() > target {
        let ap = apply_a(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Solver(format!("non-finite curvature at iteration {iterations}")));
        }
        if pap <= 0.0 {
            break;
        }
        let step = rs / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations += 1;
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::Solver(format!("non-finite residual at iteration {iterations}")));
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(CgSolution {
        x,
        iterations,
        residual_norm: rs.sqrt(),
    })
}

/// Per-step feature Gram matrices `(dt/nu)(1/N) sum_i phi(x_t^i) phi(x_t^i)^T`.
fn feature_blocks(batch: &RolloutBatch, policy: &GaussianPolicy) -> Result<Vec<(std::ops::Range<usize>, DMatrix<f64>)>> {
    check_batch(batch, policy)?;
    let x0 = batch.trajectories()[0].state(0);
    if policy.time_block(x0, 0).is_none() {
        return Err(Error::Structural("policy parameters do not decompose by time step".into()));
    }
    let scale = policy.precision() / batch.len() as f64;
    Ok(par::map_indexed(batch.steps(), |k| {
        let mut gram: Option<DMatrix<f64>> = None;
        let mut range = 0..0;
        for t in batch.trajectories() {
            let (r, phi) = policy.time_block(t.state(k), k).expect("checked above");
            let phi = DVector::from_vec(phi);
            let outer = &phi * phi.transpose();
            gram = Some(match gram {
                Some(g) => g + outer,
                None => outer,
            });
            range = r;
        }
        (range, gram.expect("non-empty batch") * scale)
    }))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues at or below
/// `rcond * max|eigenvalue|` are treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = rcond * largest;
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() > cutoff && v != 0.0 { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Applies `block` to every action segment of a time block of parameters.
fn apply_block(gram: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let m = gram.nrows();
    let mut out = Vec::with_capacity(v.len());
    for seg in v.chunks(m) {
        let r = gram * DVector::from_column_slice(seg);
        out.extend(r.iter());
    }
    out
}

fn check_direction(policy: &GaussianPolicy, g: &[f64]) -> Result<()> {
    if g.len() != policy.param_count() {
        return Err(Error::Structural(format!(
            "direction has length {}, policy has {} parameters",
            g.len(),
            policy.param_count()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("gradient is not finite".into()));
    }
    Ok(())
}

/// `pinv(F_t, rcond) g_t` for every time block of a time-varying linear policy.
pub fn per_timestep_natural_direction(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    rcond: f64,
) -> Result<Vec<f64>> {
    check_direction(policy, g)?;
    let blocks = feature_blocks(batch, policy)?;
    let mut out = vec![0.0; g.len()];
    let solved = par::map_indexed(blocks.len(), |k| {
        let (range, gram) = &blocks[k];
        apply_block(&symmetric_pinv(gram, rcond), &g[range.clone()])
    });
    for ((range, _), d) in blocks.iter().zip(solved) {
        out[range.clone()].copy_from_slice(&d);
    }
    Ok(out)
}

/// Damped conjugate gradient run separately on every time block.
pub fn per_timestep_cg_direction(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    iters: usize,
) -> Result<(Vec<f64>, usize)> {
    check_direction(policy, g)?;
    let blocks = feature_blocks(batch, policy)?;
    let solved = par::map_indexed(blocks.len(), |k| {
        let (range, gram) = &blocks[k];
        let damping = CG_DAMPING * gram.trace() / gram.nrows() as f64;
        conjugate_gradient(
            |v| {
                let mut r = apply_block(gram, v);
                for (r, v) in r.iter_mut().zip(v) {
                    *r += damping * v;
                }
                r
            },
            &g[range.clone()],
            iters,
            CG_TOL,
        )
    });
    let mut out = vec![0.0; g.len()];
    let mut total = 0;
    for ((range, _), sol) in blocks.iter().zip(solved) {
        let sol = sol?;
        total += sol.iterations;
        out[range.clone()].copy_from_slice(&sol.x);
    }
    Ok((out, total))
}

/// Damped conjugate gradient on the full Fisher operator.
pub fn cg_natural_direction(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    iters: usize,
) -> Result<(Vec<f64>, usize)> {
    check_direction(policy, g)?;
    let damping = CG_DAMPING * fisher_trace(batch, policy)? / g.len() as f64;
    let sol = conjugate_gradient(
        |v| {
            let mut r = fisher_vector_product(batch, policy, v).expect("length checked");
            for (r, v) in r.iter_mut().zip(v) {
                *r += damping * v;
            }
            r
        },
        g,
        iters,
        CG_TOL,
    )?;
    Ok((sol.x, sol.iterations))
}

/// Natural direction `F^-1 g` with the chosen solver, plus the CG iteration count.
pub fn natural_direction(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    solver: SolverKind,
) -> Result<(Vec<f64>, Option<usize>)> {
    match solver {
        SolverKind::Cg { iters, per_timestep: false } => {
            cg_natural_direction(batch, policy, g, iters).map(|(d, n)| (d, Some(n)))
        }
        SolverKind::Cg { iters, per_timestep: true } => {
            per_timestep_cg_direction(batch, policy, g, iters).map(|(d, n)| (d, Some(n)))
        }
        SolverKind::PerTimestepPinv { rcond } => {
            per_timestep_natural_direction(batch, policy, g, rcond).map(|d| (d, None))
        }
    }
}

/// Natural-gradient step `theta + eta * F^-1 g` whose sample KL to `policy` on `batch`
/// is within `KL_TOLERANCE * epsilon` of `epsilon`.
///
/// The search starts at the quadratic-model step `sqrt(2 epsilon / g^T F^-1 g)`,
/// brackets by doubling or halving and then bisects.
pub fn trust_region_step(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    epsilon: f64,
    solver: SolverKind,
) -> Result<TrustRegionUpdate> {
    trust_region_step_with(batch, policy, g, epsilon, solver, KlEstimator::Sampled)
}

/// [`trust_region_step`] with a choice of KL estimate for the step-size search.
pub fn trust_region_step_with(
    batch: &RolloutBatch,
    policy: &GaussianPolicy,
    g: &[f64],
    epsilon: f64,
    solver: SolverKind,
    kl_estimator: KlEstimator,
) -> Result<TrustRegionUpdate> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("trust region must be positive, got {epsilon}")));
    }
    let (dir, cg_iterations) = natural_direction(batch, policy, g, solver)?;
    let unchanged = |cg_iterations| TrustRegionUpdate {
        new_params: policy.params().to_vec(),
        eta: 0.0,
        achieved_kl: 0.0,
        cg_iterations,
        solver_kind: solver,
    };
    if dot(&dir, &dir).sqrt() < MIN_DIRECTION_NORM {
        return Ok(unchanged(cg_iterations));
    }

    let theta = policy.params();
    let params_at = |eta: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(t, d)| t + eta * d).collect() };
    let kl_at = |eta: f64| -> Result<f64> {
        let p = params_at(eta);
        if p.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let next = policy.with_params(p)?;
        let kl = match kl_estimator {
            KlEstimator::Sampled => sample_policy_kl(batch, policy, &next)?,
            KlEstimator::Expected => expected_policy_kl(batch, policy, &next)?,
        };
        Ok(if kl.is_nan() { f64::INFINITY } else { kl })
    };
    let tol = KL_TOLERANCE * epsilon;
    let accept = |eta: f64, kl: f64| TrustRegionUpdate {
        new_params: params_at(eta),
        eta,
        achieved_kl: kl,
        cg_iterations,
        solver_kind: solver,
    };

    let curvature = dot(g, &dir).max(0.0);
    let mut eta = (2.0 * epsilon / (curvature + 1e-12)).sqrt();
    let mut kl = kl_at(eta)?;
    if (kl - epsilon).abs() <= tol {
        return Ok(accept(eta, kl));
    }
    let (mut lo, mut hi);
    if kl < epsilon {
        lo = eta;
        hi = f64::NAN;
        for _ in 0..MAX_BRACKET_STEPS {
            eta *= 2.0;
            kl = kl_at(eta)?;
            if (kl - epsilon).abs() <= tol {
                return Ok(accept(eta, kl));
            }
            if kl > epsilon {
                hi = eta;
                break;
            }
            lo = eta;
        }
    } else {
        hi = eta;
        lo = f64::NAN;
        for _ in 0..MAX_BRACKET_STEPS {
            eta *= 0.5;
            kl = kl_at(eta)?;
            if (kl - epsilon).abs() <= tol {
                return Ok(accept(eta, kl));
            }
            if kl < epsilon {
                lo = eta;
                break;
            }
            hi = eta;
        }
    }
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::Solver(format!(
            "step-size search could not bracket KL = {epsilon} in {MAX_BRACKET_STEPS} steps (last KL {kl:e} at eta {eta:e})"
        )));
    }
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        kl = kl_at(mid)?;
        if (kl - epsilon).abs() <= tol {
            return Ok(accept(mid, kl));
        }
        if kl < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Solver(format!("step-size bisection did not reach KL = {epsilon}")))
}
