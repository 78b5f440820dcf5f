//! Deterministic simulation of asynchronous, synchronous and single-agent
//! training.
//!
//! Agents never run concurrently here. Completions are events on a
//! simulated clock; each agent's sampling is a pure function of its
//! received model and its own random stream `(seed, agent, task_index)`,
//! so the work can be done lazily when its completion event fires.

mod compute;
mod ledger;
mod record;
mod run;
mod speedup;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use compute::ComputeModel;
pub use ledger::{delay_accounting_check, DelayAccounting, DelayLedger};
pub use record::{ApplyEvent, Recorder};
pub use run::{run, run_async, run_single, run_sync};
pub use speedup::{samples_to_threshold, speedup_experiment, SpeedupResult, ThresholdRule};

use crate::afedpg::{Schedules, Variant};
use crate::error::{config, Result};
use crate::gradient::DiscountMode;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Async,
    Sync,
    Single,
    /// Real threads; provided by the `afedpg` crate.
    Parallel,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
            Mode::Single => "single",
            Mode::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            "single" => Ok(Mode::Single),
            "parallel" => Ok(Mode::Parallel),
            other => Err(config(alloc::format!("unknown mode `{other}`"))),
        }
    }
}

/// Everything a training run needs besides the MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub variant: Variant,
    pub num_agents: usize,
    /// Server applies (`K`); rounds for synchronous runs.
    pub iterations: u64,
    pub horizon: usize,
    pub schedules: Schedules,
    pub compute: ComputeModel,
    pub seed: u64,
    pub discount: DiscountMode,
    /// Initial logits; zeros (uniform policy) when `None`.
    pub theta0: Option<Vec<f64>>,
    /// Evaluate `J`, `∇J` and `e_k` exactly at every iterate.
    pub exact_metrics: bool,
    /// Keep per-apply parameter vectors for the error-recursion check.
    pub record_trace: bool,
}

impl RunConfig {
    /// Async run with defaults: unit deterministic compute times, exact
    /// metrics on, no trace.
    pub fn new(mode: Mode, num_agents: usize, iterations: u64, horizon: usize, seed: u64) -> Self {
        Self {
            mode,
            variant: Variant::ServerAnchor,
            num_agents,
            iterations,
            horizon,
            schedules: Schedules::default(),
            compute: ComputeModel::homogeneous(num_agents, 1.0),
            seed,
            discount: DiscountMode::Absolute,
            theta0: None,
            exact_metrics: true,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents < 1 {
            return Err(config("number of agents must be at least 1"));
        }
        if self.iterations < 1 {
            return Err(config("number of iterations must be at least 1"));
        }
        if self.horizon < 1 {
            return Err(config("horizon must be at least 1"));
        }
        if self.mode == Mode::Single && self.num_agents != 1 {
            return Err(config("single mode requires exactly one agent"));
        }
        self.schedules.validate()?;
        self.compute.validate(self.num_agents)
    }
}

/// One server apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub k: u64,
    pub sim_time: f64,
    /// `None` for synchronous rounds.
    pub agent_id: Option<usize>,
    pub delay: u64,
    pub concurrency: u64,
    pub eta: f64,
    pub alpha: f64,
    /// `‖d‖` before normalization.
    pub direction_norm: f64,
    pub step_norm: f64,
    pub cancellation_residual: f64,
    pub skipped: bool,
    /// Trajectories consumed up to and including this apply.
    pub samples: u64,
    /// `J(θ_k)` before the apply.
    pub expected_return: Option<f64>,
    /// `‖∇J(θ_k)‖`.
    pub grad_norm: Option<f64>,
    /// `‖d − ∇J(θ_k)‖`.
    pub error_norm: Option<f64>,
}

/// Parameter vectors around one apply, for the error-recursion check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub origin_iter: u64,
    pub alpha: f64,
    /// `θ_k`.
    pub theta: Vec<f64>,
    /// `θ_{k−1}`.
    pub theta_prev: Vec<f64>,
    /// Lookahead point the payload was sampled at.
    pub theta_tilde: Vec<f64>,
    /// Raw estimate (averaged over agents in synchronous rounds).
    pub gradient: Vec<f64>,
    /// Applied direction before normalization.
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: Mode,
    pub variant: Variant,
    pub seed: u64,
    pub num_agents: usize,
    pub rows: Vec<LogRow>,
    pub final_theta: Vec<f64>,
    pub initial_return: Option<f64>,
    /// `J(θ_K)` after the last apply.
    pub final_return: Option<f64>,
    pub optimal_return: Option<f64>,
    pub zero_direction_events: u64,
    /// Present for asynchronous and single-agent runs.
    pub ledger: Option<DelayLedger>,
    pub trace: Option<Vec<TraceRow>>,
}

impl TrainingLog {
    pub fn iterations(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn total_sim_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.sim_time)
    }

    pub fn total_samples(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.samples)
    }

    /// `J(θ_0) … J(θ_K)` when exact metrics were recorded.
    pub fn returns(&self) -> Option<Vec<f64>> {
        let mut out: Vec<f64> = self.rows.iter().map(|r| r.expected_return).collect::<Option<_>>()?;
        out.push(self.final_return?);
        Some(out)
    }

    /// `J* − J(θ_K)`.
    pub fn final_gap(&self) -> Option<f64> {
        Some(self.optimal_return? - self.final_return?)
    }

    pub fn max_cancellation_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.cancellation_residual).fold(0.0, f64::max)
    }

    /// Largest `|‖θ_{k+1} − θ_k‖ − η_k|` over non-skipped applies.
    pub fn max_step_error(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.skipped)
            .map(|r| (r.step_norm - r.eta).abs())
            .fold(0.0, f64::max)
    }
}
