use serde::{Deserialize, Serialize};

use super::{run_async, run_sync, ComputeModel, Mode, RunConfig, TrainingLog};
use crate::env::TabularMDP;
use crate::error::{config, Result};

/// Wall-clock comparison of synchronous and asynchronous training with the
/// same total number of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupResult {
    pub num_agents: usize,
    pub ratio: f64,
    pub samples: u64,
    pub sync_time: f64,
    pub async_time: f64,
    /// `sync_time / async_time`.
    pub measured: f64,
    /// `((N−1)r + 1)/N`, i.e. `t_max / (N t̄)`.
    pub predicted: f64,
}

/// One straggler at `ratio · t_min`, the rest at `t_min = 1`. The
/// synchronous run gets `K/N` rounds of `N` trajectories, the asynchronous
/// run `K` single-trajectory applies.
pub fn speedup_experiment(
    mdp: &TabularMDP,
    base: &RunConfig,
    num_agents: usize,
    ratio: f64,
    samples: u64,
) -> Result<SpeedupResult> {
    if num_agents == 0 || samples % num_agents as u64 != 0 || samples == 0 {
        return Err(config("sample budget must be a positive multiple of the number of agents"));
    }
    if !(ratio.is_finite() && ratio >= 1.0) {
        return Err(config("straggler ratio must be at least 1"));
    }
    let compute = ComputeModel::straggler(num_agents, ratio, 1.0);
    let mut cfg = RunConfig {
        num_agents,
        compute: compute.clone(),
        exact_metrics: false,
        record_trace: false,
        ..base.clone()
    };
    cfg.mode = Mode::Async;
    cfg.iterations = samples;
    let asy = run_async(mdp, &cfg)?;
    cfg.mode = Mode::Sync;
    cfg.iterations = samples / num_agents as u64;
    let syn = run_sync(mdp, &cfg)?;
    let (sync_time, async_time) = (syn.total_sim_time(), asy.total_sim_time());
    Ok(SpeedupResult {
        num_agents,
        ratio,
        samples,
        sync_time,
        async_time,
        measured: sync_time / async_time,
        predicted: compute.t_max() / (num_agents as f64 * compute.harmonic()),
    })
}

/// "Reached" means the trailing-window mean of `J* − J(θ_k)` has dropped to
/// `fraction · (J* − J(θ₀))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub fraction: f64,
    pub window: usize,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        Self { fraction: 0.05, window: 100 }
    }
}

/// Trajectories consumed when the threshold is first met, or `None`.
///
/// The window is partial over the first `window − 1` iterates.
pub fn samples_to_threshold(log: &TrainingLog, rule: ThresholdRule) -> Option<u64> {
    let j_star = log.optimal_return?;
    let j0 = log.initial_return?;
    let target = rule.fraction * (j_star - j0);
    let w = rule.window.max(1);
    let gaps: alloc::vec::Vec<f64> = log.rows.iter().map(|r| r.expected_return.map(|j| j_star - j)).collect::<Option<_>>()?;
    let mut sum = 0.0;
    for (k, g) in gaps.iter().enumerate() {
        sum += g;
        if k >= w {
            sum -= gaps[k - w];
        }
        let mean = sum / (k + 1).min(w) as f64;
        if mean <= target {
            return Some(log.rows[k].samples);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_speedup_is_one() {
        let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
        let base = RunConfig::new(Mode::Async, 4, 1, 1, 0);
        let r = speedup_experiment(&mdp, &base, 4, 1.0, 400).unwrap();
        assert!((r.measured - 1.0).abs() < 1e-12);
        assert!((r.predicted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_must_divide() {
        let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
        let base = RunConfig::new(Mode::Async, 4, 1, 1, 0);
        assert!(speedup_experiment(&mdp, &base, 4, 2.0, 401).is_err());
    }
}
