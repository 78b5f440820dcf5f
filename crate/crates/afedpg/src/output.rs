//! `log.csv` and `summary.json`.

use std::fs;
use std::io::Write;
use std::path::Path;

use afedpg_core::analysis::LemmaReport;
use afedpg_core::sim::{samples_to_threshold, LogRow, ThresholdRule, TrainingLog};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Bumped whenever a `log.csv` column is added, removed or reinterpreted.
pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Header of `log.csv`, in column order.
pub const LOG_COLUMNS: [&str; 15] = [
    "k",
    "sim_time",
    "agent_id",
    "delay",
    "concurrency",
    "eta",
    "alpha",
    "direction_norm",
    "step_norm",
    "cancellation_residual",
    "skipped",
    "samples",
    "expected_return",
    "grad_norm",
    "error_norm",
];

/// Writes one row per apply. Missing values are empty fields.
pub fn write_log<W: Write>(out: W, rows: &[LogRow]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(LOG_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> csv::Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect()
}

/// Pass/fail line of one check, without its samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: String,
    pub class: afedpg_core::analysis::Strictness,
    pub passed: bool,
    pub max_violation: f64,
    pub tolerance: f64,
    pub sample_count: u64,
    pub notes: Vec<String>,
}

impl From<&LemmaReport> for CheckOutcome {
    fn from(r: &LemmaReport) -> Self {
        Self {
            id: r.id.clone(),
            class: r.class,
            passed: r.passed,
            max_violation: r.max_violation,
            tolerance: r.tolerance,
            sample_count: r.sample_count,
            notes: r.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub log_schema_version: u32,
    pub config_hash: String,
    /// The resolved config.
    pub config: ExperimentConfig,
    pub iterations: u64,
    pub optimal_return: Option<f64>,
    pub initial_return: Option<f64>,
    pub final_return: Option<f64>,
    /// `J* − J(θ_K)`.
    pub final_gap: Option<f64>,
    /// `δ̄` over applied and unapplied delays; absent for synchronous runs.
    pub mean_delay: Option<f64>,
    /// `ω̄`.
    pub mean_concurrency: Option<f64>,
    pub max_delay: Option<u64>,
    /// `t̄ = 1/Σ 1/t_i` of the nominal compute times.
    pub harmonic_time: f64,
    pub t_max: f64,
    pub total_sim_time: f64,
    pub mean_inter_apply_time: f64,
    pub total_samples: u64,
    pub samples_to_threshold: Option<u64>,
    pub zero_direction_events: u64,
    pub max_cancellation_residual: f64,
    pub max_step_error: f64,
    pub checks: Vec<CheckOutcome>,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, log: &TrainingLog, checks: &[LemmaReport]) -> Self {
        let compute = cfg.compute.resolve(cfg.num_agents);
        let ledger = log.ledger.as_ref();
        let k = log.iterations();
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            log_schema_version: LOG_SCHEMA_VERSION,
            config_hash: cfg.hash(),
            config: cfg.resolved(),
            iterations: k,
            optimal_return: log.optimal_return,
            initial_return: log.initial_return,
            final_return: log.final_return,
            final_gap: log.final_gap(),
            mean_delay: ledger.map(|l| l.mean_delay()),
            mean_concurrency: ledger.map(|l| l.mean_concurrency()),
            max_delay: ledger.map(|l| l.max_delay()),
            harmonic_time: compute.harmonic(),
            t_max: compute.t_max(),
            total_sim_time: log.total_sim_time(),
            mean_inter_apply_time: if k > 0 { log.total_sim_time() / k as f64 } else { 0.0 },
            total_samples: log.total_samples(),
            samples_to_threshold: samples_to_threshold(log, ThresholdRule::default()),
            zero_direction_events: log.zero_direction_events,
            max_cancellation_residual: log.max_cancellation_residual(),
            max_step_error: log.max_step_error(),
            checks: checks.iter().map(CheckOutcome::from).collect(),
        }
    }
}

/// Creates `dir` and writes `log.csv` and `summary.json` into it.
pub fn write_run(dir: &Path, log: &TrainingLog, summary: &Summary) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join("log.csv"))?;
    write_log(std::io::BufWriter::new(file), &log.rows)?;
    let json = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    fs::write(dir.join("summary.json"), json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64) -> LogRow {
        LogRow {
            k,
            sim_time: 1.5 * (k + 1) as f64,
            agent_id: (k % 2 == 0).then_some(1),
            delay: k,
            concurrency: 2,
            eta: 0.1,
            alpha: 1.0,
            direction_norm: 0.25,
            step_norm: 0.1,
            cancellation_residual: 0.0,
            skipped: false,
            samples: k + 1,
            expected_return: Some(0.5),
            grad_norm: None,
            error_norm: None,
        }
    }

    #[test]
    fn header_and_round_trip() {
        let rows = vec![row(0), row(1)];
        let mut buf = Vec::new();
        write_log(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), LOG_COLUMNS.join(","));
        assert_eq!(text.lines().nth(2).unwrap(), "1,3.0,,1,2,0.1,1.0,0.25,0.1,0.0,false,2,0.5,,");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_log(&p).unwrap(), rows);
    }
}
