//! Adaptive smoothing of path integral control.
//!
//! Policy optimization for continuous-time stochastic control problems of the form
//! `dx = f(x,t) dt + g(x,t) (u(x,t) dt + dW)` with a KL-regularized cost. Each iteration
//! draws a batch of rollouts, chooses the smoothing parameter `alpha` of an
//! inf-convolution smoothed cost so that the weight entropy stays above a target, forms
//! the score-function gradient of the smoothed cost, and takes a natural-gradient step
//! whose sample KL to the previous policy equals the trust-region size.
//!
//! Module map:
//!
//! * [`trajectory`]: rollouts, batches and the stochastic cost `S`.
//! * [`smoothing`]: exponential weights, weight entropy, adaptive `alpha` search.
//! * [`gradients`]: smoothed, direct and PICE score-function estimators.
//! * [`natural`]: Fisher-vector products, conjugate gradient, per-timestep pseudo-inverse,
//!   trust-region step.
//! * [`policy`]: Gaussian policies with time-varying linear or MLP means.
//! * [`env`]: the viapoint, pendulum and acrobot benchmarks plus the rollout sampler.
//! * [`runner`]: the outer optimization loop, sweeps, seeding and export.

pub mod env;
pub mod error;
pub mod gradients;
pub mod natural;
pub mod policy;
pub mod runner;
pub mod seed;
pub mod smoothing;
pub mod trajectory;

mod par;

pub use env::{rollout, rollout_with_noise, sample_batch, step, Env, EnvSpec, Environment};
pub use error::{Error, Result};
pub use gradients::{
    direct_gradient, pice_gradient, smoothed_cost_value, smoothed_gradient, EstimatorKind,
    GradientEstimate,
};
pub use natural::{
    conjugate_gradient, expected_policy_kl, fisher_vector_product, per_timestep_natural_direction,
    sample_policy_kl, trust_region_step, trust_region_step_with, KlEstimator, SolverKind, TrustRegionUpdate,
};
pub use policy::{FeatureMap, GaussianPolicy, MeanModel, Mlp, TimeVaryingLinear};
pub use runner::{run_aspic, ExperimentConfig, IterationRecord};
pub use smoothing::{find_alpha, kl_estimate, normalized_weights, weight_entropy, SmoothingResult};
pub use trajectory::{batch_mean_cost, stochastic_cost, RolloutBatch, Trajectory};
