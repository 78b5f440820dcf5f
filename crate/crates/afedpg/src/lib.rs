//! Experiment runner for `afedpg-core`: JSON configs, CSV logs, JSON
//! summaries, parameter sweeps, the check suites and a threaded runner.

pub mod checks;
pub mod config;
pub mod output;
pub mod parallel;
pub mod sweep;

use std::path::{Path, PathBuf};

use afedpg_core::analysis::LemmaReport;
use afedpg_core::sim::{run, Mode, TrainingLog};

use config::ExperimentConfig;
use output::Summary;

/// Output root used when neither `--out`, `output_dir` nor `AFEDPG_OUT` is set.
pub const DEFAULT_OUT_ROOT: &str = "out";

#[derive(Debug)]
pub struct RunOutcome {
    pub log: TrainingLog,
    pub reports: Vec<LemmaReport>,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn checks_passed(&self) -> bool {
        !self.reports.iter().any(LemmaReport::is_failure)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    /// Training stopped; `partial` holds the applies made before the failure.
    #[error("run failed: {message}")]
    Failed { message: String, partial: Option<Box<TrainingLog>> },
}

impl From<afedpg_core::Error> for RunError {
    fn from(e: afedpg_core::Error) -> Self {
        match e {
            afedpg_core::Error::Config(m) => RunError::Config(m),
            other => RunError::Failed { message: other.to_string(), partial: None },
        }
    }
}

/// Builds the MDP, trains and runs the toggled checks.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let mdp = cfg.env.build()?;
    let rc = cfg.run_config();
    let log = match rc.mode {
        Mode::Parallel => parallel::run_parallel(&mdp, &rc)
            .map_err(|e| RunError::Failed { message: e.message, partial: e.partial.map(Box::new) })?,
        _ => run(&mdp, &rc)?,
    };
    let reports = checks::run_checks(cfg, &mdp, &log)?;
    let summary = Summary::new(cfg, &log, &reports);
    Ok(RunOutcome { log, reports, summary })
}

/// `--out`, then the config's `output_dir`, then `<AFEDPG_OUT or out>/<name>`.
pub fn output_dir(cli_out: Option<&Path>, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = std::env::var_os("AFEDPG_OUT").map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
    root.join(name)
}
