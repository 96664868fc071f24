use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::env::{Env, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::gradients::EstimatorKind;
use crate::natural::{KlEstimator, SolverKind};
use crate::policy::{GaussianPolicy, MeanModel, Mlp, TimeVaryingLinear};

/// Smoothing strength, either absolute (nats) or as a fraction of `log N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSpec {
    Absolute(f64),
    Lognfrac(f64),
}

impl DeltaSpec {
    /// Value in nats for a batch of `n` rollouts.
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            DeltaSpec::Absolute(v) => v,
            DeltaSpec::Lognfrac(c) => c * (n as f64).ln(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DeltaSpec::Absolute(v) => format!("{v}"),
            DeltaSpec::Lognfrac(c) => format!("{c}*logN"),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn yes() -> bool {
    true
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

fn one() -> usize {
    1
}

/// Family of the policy mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "family", deny_unknown_fields)]
pub enum PolicyConfig {
    /// Time-varying linear feedback over the environment's features, started at zero.
    #[default]
    TimeVaryingLinear,
    /// Tanh network started from Glorot-uniform weights.
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "yes")]
        time_input: bool,
    },
}

/// Value lists for the sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepValues {
    pub delta: Vec<DeltaSpec>,
    pub n: Vec<usize>,
    pub epsilon: Vec<f64>,
}

/// Everything that determines an experiment. See `docs/CONFIG.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Rollouts per iteration `N`.
    pub n_rollouts: usize,
    pub iterations: usize,
    /// Trust-region size.
    pub epsilon: f64,
    pub gamma: f64,
    /// Required for the smoothed estimator; zero falls back to the direct gradient.
    #[serde(default)]
    pub delta: Option<DeltaSpec>,
    pub estimator: EstimatorKind,
    /// Whiten weights (smoothed) or costs (direct) before forming the gradient.
    #[serde(default = "yes")]
    pub whiten: bool,
    pub solver: SolverKind,
    /// KL estimate driven to `epsilon` by the step-size search.
    #[serde(default, skip_serializing_if = "is_default")]
    pub trust_region_kl: KlEstimator,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Cost level used for iterations-to-threshold.
    #[serde(default)]
    pub cost_threshold: Option<f64>,
    /// End a run at the first iteration whose mean cost reaches `cost_threshold`.
    #[serde(default)]
    pub stop_at_threshold: bool,
    /// Total rollouts per run for the `n` sweep; iterations become `budget / N`.
    #[serde(default)]
    pub rollout_budget: Option<usize>,
    #[serde(default)]
    pub sweep: SweepValues,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Smoothing strength in nats, if the estimator uses one.
    pub fn delta_value(&self) -> Option<f64> {
        self.delta.map(|d| d.resolve(self.n_rollouts))
    }

    /// The estimator actually run: smoothed with zero strength is the direct gradient.
    pub fn effective_estimator(&self) -> EstimatorKind {
        match (self.estimator, self.delta_value()) {
            (EstimatorKind::Smoothed, Some(d)) if d == 0.0 => EstimatorKind::Direct,
            (kind, _) => kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_rollouts < 2 {
            return bad(format!("n_rollouts must be at least 2, got {}", self.n_rollouts));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        match (self.estimator, self.delta_value()) {
            (EstimatorKind::Smoothed, None) => return bad("the smoothed estimator needs delta".into()),
            (EstimatorKind::Smoothed, Some(d)) if !(d >= 0.0) || !d.is_finite() => {
                return bad(format!("delta must be >= 0, got {d}"))
            }
            (EstimatorKind::Pice, _) if self.gamma == 0.0 => {
                return bad("the pice estimator needs gamma > 0".into())
            }
            _ => {}
        }
        match self.solver {
            SolverKind::Cg { iters: 0, .. } => return bad("cg needs at least one iteration".into()),
            SolverKind::PerTimestepPinv { rcond } if !(rcond >= 0.0) => {
                return bad(format!("rcond must be >= 0, got {rcond}"))
            }
            _ => {}
        }
        let per_step = matches!(
            self.solver,
            SolverKind::PerTimestepPinv { .. } | SolverKind::Cg { per_timestep: true, .. }
        );
        if per_step && !matches!(self.policy, PolicyConfig::TimeVaryingLinear) {
            return bad("per-timestep solvers need the time_varying_linear policy".into());
        }
        if let PolicyConfig::Mlp { hidden, .. } = &self.policy {
            if hidden.iter().any(|&h| h == 0) {
                return bad("hidden layer sizes must be positive".into());
            }
        }
        if self.stop_at_threshold && self.cost_threshold.is_none() {
            return bad("stop_at_threshold needs cost_threshold".into());
        }
        if let Some(0) = self.rollout_budget {
            return bad("rollout_budget must be positive".into());
        }
        self.env.build()?;
        Ok(())
    }

    pub fn build_env(&self) -> Result<Env> {
        self.env.build()
    }

    /// Initial policy of a run.
    pub fn initial_policy(&self, env: &Env, init_seed: u64) -> Result<GaussianPolicy> {
        let spec = env.spec();
        match &self.policy {
            PolicyConfig::TimeVaryingLinear => {
                let model = TimeVaryingLinear::new(env.features(), spec.steps(), spec.action_dim);
                GaussianPolicy::zeros(MeanModel::Linear(model), spec.nu, spec.dt)
            }
            PolicyConfig::Mlp { hidden, time_input } => {
                let mlp = Mlp::new(spec.state_dim, hidden, spec.action_dim, *time_input);
                let params = mlp.glorot_params(init_seed);
                GaussianPolicy::new(MeanModel::Mlp(mlp), params, spec.nu, spec.dt)
            }
        }
    }

    /// Canonical JSON: keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Git blob hash of the canonical JSON, as `git hash-object` would print it.
    pub fn content_hash(&self) -> String {
        git_blob_hash(self.canonical_json().as_bytes())
    }
}

/// SHA-1 of `"blob <len>\0" + bytes`.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "env": {"kind": "lq_viapoints"},
        "n_rollouts": 10, "iterations": 3, "epsilon": 0.1, "gamma": 1.0,
        "delta": {"lognfrac": 0.2}, "estimator": "smoothed",
        "solver": {"kind": "cg", "iters": 2, "per_timestep": true}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(cfg.whiten);
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.policy, PolicyConfig::TimeVaryingLinear);
        assert!((cfg.delta_value().unwrap() - 0.2 * 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("\"n_rollouts\": 10", "\"n_rollouts\": 1"),
            ("\"epsilon\": 0.1", "\"epsilon\": 0.0"),
            ("\"iterations\": 3", "\"iterations\": 0"),
            ("\"gamma\": 1.0", "\"gamma\": -1.0"),
            ("\"delta\": {\"lognfrac\": 0.2}", "\"delta\": {\"absolute\": -1}"),
            ("\"gamma\": 1.0", "\"gamma\": 1.0, \"unknown\": 3"),
            ("\"iters\": 2", "\"iters\": 0"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(ExperimentConfig::from_json(&text).is_err(), "{to}");
        }
        let mlp = MINIMAL.replace("\"n_rollouts\"", "\"policy\": {\"family\": \"mlp\"}, \"n_rollouts\"");
        assert!(matches!(ExperimentConfig::from_json(&mlp), Err(Error::Config(_))));
    }

    #[test]
    fn zero_delta_is_direct() {
        let text = MINIMAL.replace("{\"lognfrac\": 0.2}", "{\"absolute\": 0.0}");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.effective_estimator(), EstimatorKind::Direct);
    }

    #[test]
    fn git_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let compact: String = MINIMAL.split_whitespace().collect();
        let b = ExperimentConfig::from_json(&compact).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn trust_region_kl_option() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(a.trust_region_kl, KlEstimator::Sampled);
        let explicit = MINIMAL.replace("\"gamma\": 1.0", "\"gamma\": 1.0, \"trust_region_kl\": \"sampled\"");
        assert_eq!(ExperimentConfig::from_json(&explicit).unwrap().content_hash(), a.content_hash());
        let expected = MINIMAL.replace("\"gamma\": 1.0", "\"gamma\": 1.0, \"trust_region_kl\": \"expected\"");
        let b = ExperimentConfig::from_json(&expected).unwrap();
        assert_eq!(b.trust_region_kl, KlEstimator::Expected);
        assert_ne!(a.content_hash(), b.content_hash());
        assert!(b.canonical_json().contains("\"trust_region_kl\":\"expected\""));
    }
}
