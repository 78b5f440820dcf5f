//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use afedpg_core::afedpg::{Schedules, Variant};
use afedpg_core::env::{truncation_horizon, TabularMDP};
use afedpg_core::gradient::DiscountMode;
use afedpg_core::sim::{ComputeModel, Mode, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Relative truncation tolerance used when `horizon` is omitted.
pub const HORIZON_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// One state, `γ = 0`, one action per arm.
    Bandit { rewards: Vec<f64> },
    Chain {
        length: usize,
        #[serde(default = "default_slip")]
        slip: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Gridworld {
        size: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Random {
        states: usize,
        actions: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_slip() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.9
}

impl EnvSpec {
    pub fn build(&self) -> afedpg_core::Result<TabularMDP> {
        match self {
            EnvSpec::Bandit { rewards } => TabularMDP::bandit(rewards),
            EnvSpec::Chain { length, slip, gamma } => TabularMDP::chain(*length, *slip, *gamma),
            EnvSpec::Gridworld { size, gamma } => TabularMDP::gridworld(*size, *gamma),
            EnvSpec::Random { states, actions, gamma, seed } => TabularMDP::random(*seed, *states, *actions, *gamma),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvSpec::Bandit { .. } => 0.0,
            EnvSpec::Chain { gamma, .. } | EnvSpec::Gridworld { gamma, .. } | EnvSpec::Random { gamma, .. } => *gamma,
        }
    }
}

/// Compute-time law as written in a config; resolved against `num_agents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComputeSpec {
    /// Every agent takes `time`.
    Homogeneous {
        #[serde(default = "one")]
        time: f64,
    },
    /// Agent 0 takes `ratio · t_min`, the others `t_min`.
    Straggler {
        ratio: f64,
        #[serde(default = "one")]
        t_min: f64,
    },
    Deterministic { times: Vec<f64> },
    LogNormal { medians: Vec<f64>, sigma: f64, shift: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for ComputeSpec {
    fn default() -> Self {
        ComputeSpec::Homogeneous { time: 1.0 }
    }
}

impl ComputeSpec {
    pub fn resolve(&self, num_agents: usize) -> ComputeModel {
        match self {
            ComputeSpec::Homogeneous { time } => ComputeModel::homogeneous(num_agents, *time),
            ComputeSpec::Straggler { ratio, t_min } => ComputeModel::straggler(num_agents, *ratio, *t_min),
            ComputeSpec::Deterministic { times } => ComputeModel::Deterministic { times: times.clone() },
            ComputeSpec::LogNormal { medians, sigma, shift } => {
                ComputeModel::LogNormal { medians: medians.clone(), sigma: *sigma, shift: *shift }
            }
        }
    }
}

/// What `run` evaluates besides training itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckToggles {
    /// Exact `J`, `‖∇J‖` and `‖e_k‖` at every iterate.
    pub exact_metrics: bool,
    /// Cancellation, normalized-step and ledger checks on the finished run.
    pub invariants: bool,
    /// Ascent-lemma residuals with the analytic `L_g`; needs exact metrics.
    pub ascent: bool,
}

impl Default for CheckToggles {
    fn default() -> Self {
        Self { exact_metrics: true, invariants: true, ascent: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub variant: Variant,
    pub env: EnvSpec,
    pub num_agents: usize,
    #[serde(default)]
    pub compute: ComputeSpec,
    #[serde(default)]
    pub schedules: Schedules,
    pub iterations: u64,
    /// Truncation horizon `T`; derived from `γ` when absent.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub discount: DiscountMode,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub checks: CheckToggles,
}

/// A config that failed to parse or validate, with its location when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub source_name: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.source_name, self.message),
            (Some(l), None) => write!(f, "{}:{l}: {}", self.source_name, self.message),
            _ => write!(f, "{}: {}", self.source_name, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of the first `"key":` in `text`.
fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    let mut from = 0;
    while let Some(off) = text[from..].find(&needle) {
        let at = from + off;
        let after = text[at + needle.len()..].trim_start();
        if after.starts_with(':') {
            let line = text[..at].matches('\n').count() + 1;
            let col = at - text[..at].rfind('\n').map_or(0, |i| i + 1) + 1;
            return Some((line, col));
        }
        from = at + needle.len();
    }
    None
}

impl ExperimentConfig {
    /// Parses and validates; `source_name` labels error messages.
    pub fn from_json(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            source_name: source_name.to_string(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: strip_position(&e.to_string()),
        })?;
        cfg.validate().map_err(|(key, message)| {
            let pos = key.and_then(|k| locate_key(text, k));
            ConfigError {
                source_name: source_name.to_string(),
                line: pos.map(|p| p.0),
                column: pos.map(|p| p.1),
                message,
            }
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source_name: name.clone(),
            line: None,
            column: None,
            message: e.to_string(),
        })?;
        Self::from_json(&text, &name)
    }

    /// Offending key (if any) and message for the first invalid field.
    fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        let fail = |key: &'static str, msg: String| Err((Some(key), msg));
        if self.num_agents < 1 {
            return fail("num_agents", "num_agents must be at least 1".into());
        }
        if self.iterations < 1 {
            return fail("iterations", "iterations must be at least 1".into());
        }
        if self.horizon == Some(0) {
            return fail("horizon", "horizon must be at least 1".into());
        }
        if self.mode == Mode::Single && self.num_agents != 1 {
            return fail("num_agents", "single mode requires num_agents = 1".into());
        }
        if let Err(e) = self.schedules.validate() {
            return fail("schedules", e.to_string());
        }
        if let Err(e) = self.env.build() {
            return fail("env", e.to_string());
        }
        if let Err(e) = self.compute.resolve(self.num_agents).validate(self.num_agents) {
            return fail("compute", e.to_string());
        }
        if let Some(t) = &self.theta0 {
            let mdp = self.env.build().expect("checked above");
            let dim = mdp.num_states() * mdp.num_actions();
            if t.len() != dim {
                return fail("theta0", format!("theta0 has {} entries, expected {dim}", t.len()));
            }
        }
        if self.checks.ascent && !self.checks.exact_metrics {
            return fail("ascent", "the ascent check needs exact_metrics".into());
        }
        Ok(())
    }

    /// Horizon filled in, output directory cleared: the form that is hashed
    /// and echoed into summaries.
    pub fn resolved(&self) -> Self {
        let horizon = self.horizon.unwrap_or_else(|| truncation_horizon(self.env.gamma(), HORIZON_TOLERANCE));
        Self { horizon: Some(horizon), output_dir: None, ..self.clone() }
    }

    /// SHA-256 of the resolved config serialized with sorted keys.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self.resolved()).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_config(&self) -> RunConfig {
        let r = self.resolved();
        RunConfig {
            mode: r.mode,
            variant: r.variant,
            num_agents: r.num_agents,
            iterations: r.iterations,
            horizon: r.horizon.expect("resolved"),
            schedules: r.schedules,
            compute: r.compute.resolve(r.num_agents),
            seed: r.seed,
            discount: r.discount,
            theta0: r.theta0,
            exact_metrics: r.checks.exact_metrics,
            record_trace: false,
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Configurations shipped with the crate, by file stem.
pub const BUNDLED: &[(&str, &str)] = &[
    ("bandit_single", include_str!("../configs/bandit_single.json")),
    ("chain_async", include_str!("../configs/chain_async.json")),
    ("chain_agent_anchor", include_str!("../configs/chain_agent_anchor.json")),
    ("chain_sync", include_str!("../configs/chain_sync.json")),
    ("gridworld_async", include_str!("../configs/gridworld_async.json")),
    ("random_lognormal", include_str!("../configs/random_lognormal.json")),
    ("straggler", include_str!("../configs/straggler.json")),
];

pub fn bundled(name: &str) -> Option<ExperimentConfig> {
    let text = BUNDLED.iter().find(|(n, _)| *n == name)?.1;
    Some(ExperimentConfig::from_json(text, name).expect("bundled configs are valid"))
}

/// Loads `bundled:<name>` from the embedded set, anything else from disk.
pub fn load(spec: &str) -> Result<ExperimentConfig, ConfigError> {
    match spec.strip_prefix("bundled:") {
        Some(name) => bundled(name).ok_or_else(|| ConfigError {
            source_name: spec.to_string(),
            line: None,
            column: None,
            message: format!(
                "no bundled config `{name}`; available: {}",
                BUNDLED.iter().map(|b| b.0).collect::<Vec<_>>().join(", ")
            ),
        }),
        None => ExperimentConfig::from_path(Path::new(spec)),
    }
}
