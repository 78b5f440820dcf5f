//! Multi-seed sweeps over one axis of a base config.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use afedpg_core::afedpg::Variant;
use afedpg_core::sim::{run, samples_to_threshold, speedup_experiment, Mode, ThresholdRule};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::ExperimentConfig;
use crate::parallel::run_parallel;

#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    /// Number of agents.
    Agents(Vec<usize>),
    /// Straggler ratio `r`; each cell is a sync-vs-async speedup experiment
    /// with the base config's `N` and a budget of `iterations` trajectories.
    Ratio(Vec<f64>),
    /// Server-side and agent-side anchoring on the same seeds.
    Variant,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Agents(_) => "num_agents",
            Axis::Ratio(_) => "ratio",
            Axis::Variant => "variant",
        }
    }

    fn values(&self) -> Vec<String> {
        match self {
            Axis::Agents(v) => v.iter().map(ToString::to_string).collect(),
            Axis::Ratio(v) => v.iter().map(ToString::to_string).collect(),
            Axis::Variant => [Variant::ServerAnchor, Variant::AgentAnchor].iter().map(ToString::to_string).collect(),
        }
    }
}

/// Outcome of one `(cell, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRun {
    pub cell: usize,
    pub seed: u64,
    pub final_gap: Option<f64>,
    pub samples_to_threshold: Option<u64>,
    pub mean_delay: Option<f64>,
    pub sim_time: f64,
    pub total_samples: u64,
    pub speedup: Option<f64>,
    pub predicted_speedup: Option<f64>,
}

/// One aggregated cell. `*_ci95` are half-widths of Student-t intervals
/// over seeds; sample counts to threshold use only seeds that reached it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub num_agents: usize,
    pub seeds: u64,
    pub final_gap_mean: Option<f64>,
    pub final_gap_ci95: Option<f64>,
    pub reached: u64,
    pub samples_to_threshold_median: Option<f64>,
    pub samples_to_threshold_mean: Option<f64>,
    pub samples_to_threshold_ci95: Option<f64>,
    pub per_agent_samples_median: Option<f64>,
    pub mean_delay_mean: Option<f64>,
    pub sim_time_mean: f64,
    pub sim_time_ci95: Option<f64>,
    pub speedup_mean: Option<f64>,
    pub speedup_ci95: Option<f64>,
    pub predicted_speedup: Option<f64>,
}

/// Mean and 95% half-width; the half-width needs two values.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    Some((mean, Some(t * (var / n).sqrt())))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn cell_config(base: &ExperimentConfig, axis: &Axis, cell: usize, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.seed = seed;
    match axis {
        Axis::Agents(v) => {
            c.num_agents = v[cell];
            if c.mode == Mode::Single && c.num_agents > 1 {
                c.mode = Mode::Async;
            }
        }
        Axis::Ratio(_) => {}
        Axis::Variant => c.variant = if cell == 0 { Variant::ServerAnchor } else { Variant::AgentAnchor },
    }
    c
}

fn run_cell(base: &ExperimentConfig, axis: &Axis, cell: usize, seed: u64) -> anyhow::Result<CellRun> {
    let cfg = cell_config(base, axis, cell, seed);
    let mdp = cfg.env.build()?;
    let rc = cfg.run_config();
    if let Axis::Ratio(ratios) = axis {
        let n = rc.num_agents;
        let samples = (rc.iterations / n as u64).max(1) * n as u64;
        let s = speedup_experiment(&mdp, &rc, n, ratios[cell], samples)?;
        return Ok(CellRun {
            cell,
            seed,
            final_gap: None,
            samples_to_threshold: None,
            mean_delay: None,
            sim_time: s.async_time,
            total_samples: samples,
            speedup: Some(s.measured),
            predicted_speedup: Some(s.predicted),
        });
    }
    let log = match rc.mode {
        Mode::Parallel => run_parallel(&mdp, &rc)?,
        _ => run(&mdp, &rc)?,
    };
    Ok(CellRun {
        cell,
        seed,
        final_gap: log.final_gap(),
        samples_to_threshold: samples_to_threshold(&log, ThresholdRule::default()),
        mean_delay: log.ledger.as_ref().map(|l| l.mean_delay()),
        sim_time: log.total_sim_time(),
        total_samples: log.total_samples(),
        speedup: None,
        predicted_speedup: None,
    })
}

/// Runs every `(cell, seed)` pair on up to `threads` threads. Seeds are
/// `base.seed, base.seed + 1, …`. Results are in `(cell, seed)` order.
pub fn run_sweep(base: &ExperimentConfig, axis: &Axis, seeds: u64, threads: usize) -> anyhow::Result<Vec<CellRun>> {
    let cells = axis.values().len();
    let jobs: Vec<(usize, u64)> = (0..cells).flat_map(|c| (0..seeds).map(move |s| (c, s))).collect();
    let results: Mutex<Vec<Option<anyhow::Result<CellRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(cell, s)) = jobs.get(i) else { break };
                let r = run_cell(base, axis, cell, base.seed + s);
                results.lock().expect("no panics while locked")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("no panics while locked").into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn aggregate(base: &ExperimentConfig, axis: &Axis, runs: &[CellRun]) -> Vec<SweepRow> {
    axis.values()
        .into_iter()
        .enumerate()
        .map(|(cell, value)| {
            let rs: Vec<&CellRun> = runs.iter().filter(|r| r.cell == cell).collect();
            let num_agents = cell_config(base, axis, cell, base.seed).num_agents;
            let gaps: Vec<f64> = rs.iter().filter_map(|r| r.final_gap).collect();
            let hit: Vec<f64> = rs.iter().filter_map(|r| r.samples_to_threshold).map(|s| s as f64).collect();
            let delays: Vec<f64> = rs.iter().filter_map(|r| r.mean_delay).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.sim_time).collect();
            let speed: Vec<f64> = rs.iter().filter_map(|r| r.speedup).collect();
            let g = mean_ci95(&gaps);
            let h = mean_ci95(&hit);
            let t = mean_ci95(&times);
            let sp = mean_ci95(&speed);
            let med = median(&hit);
            SweepRow {
                axis: axis.name().to_string(),
                value,
                num_agents,
                seeds: rs.len() as u64,
                final_gap_mean: g.map(|x| x.0),
                final_gap_ci95: g.and_then(|x| x.1),
                reached: hit.len() as u64,
                samples_to_threshold_median: med,
                samples_to_threshold_mean: h.map(|x| x.0),
                samples_to_threshold_ci95: h.and_then(|x| x.1),
                per_agent_samples_median: med.map(|m| m / num_agents as f64),
                mean_delay_mean: mean_ci95(&delays).map(|x| x.0),
                sim_time_mean: t.map_or(0.0, |x| x.0),
                sim_time_ci95: t.and_then(|x| x.1),
                speedup_mean: sp.map(|x| x.0),
                speedup_ci95: sp.and_then(|x| x.1),
                predicted_speedup: rs.first().and_then(|r| r.predicted_speedup),
            }
        })
        .collect()
}

pub fn write_sweep<W: std::io::Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_by_hand() {
        // n = 2: t_{0.975,1} = 12.7062, s = √2, half-width = 12.7062
        let (m, ci) = mean_ci95(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((ci.unwrap() - 12.706_204_736).abs() < 1e-6);
        assert_eq!(mean_ci95(&[4.0]), Some((4.0, None)));
        assert_eq!(mean_ci95(&[]), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
