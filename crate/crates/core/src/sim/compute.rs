use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{labels, named_stream};

/// Per-agent compute-time law, in simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComputeModel {
    /// Agent `i` always takes `times[i]`.
    Deterministic { times: Vec<f64> },
    /// `t = m_i (shift + (1 − shift) e^{σZ})`, `Z ~ N(0, 1)`; the median is
    /// `m_i` and `t ≥ shift·m_i`.
    LogNormal { medians: Vec<f64>, sigma: f64, shift: f64 },
}

impl ComputeModel {
    pub fn homogeneous(num_agents: usize, t: f64) -> Self {
        ComputeModel::Deterministic { times: alloc::vec![t; num_agents] }
    }

    /// Agent 0 takes `ratio · t_min`, all others `t_min`.
    pub fn straggler(num_agents: usize, ratio: f64, t_min: f64) -> Self {
        let mut times = alloc::vec![t_min; num_agents];
        if let Some(t) = times.first_mut() {
            *t = ratio * t_min;
        }
        ComputeModel::Deterministic { times }
    }

    /// Per-agent typical times: exact times or medians.
    pub fn nominal(&self) -> &[f64] {
        match self {
            ComputeModel::Deterministic { times } => times,
            ComputeModel::LogNormal { medians, .. } => medians,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.nominal().len()
    }

    pub fn validate(&self, num_agents: usize) -> Result<()> {
        let t = self.nominal();
        if t.len() != num_agents {
            return Err(config(alloc::format!(
                "compute model lists {} agents but the run has {num_agents}",
                t.len()
            )));
        }
        if t.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(config("compute times must be positive and finite"));
        }
        if let ComputeModel::LogNormal { sigma, shift, .. } = self {
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return Err(config("lognormal sigma must be nonnegative and finite"));
            }
            if !(0.0..1.0).contains(shift) {
                return Err(config("lognormal shift must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Time agent `agent` needs for its `task_index`-th task.
    pub fn draw(&self, seed: u64, agent: usize, task_index: u64) -> f64 {
        match self {
            ComputeModel::Deterministic { times } => times[agent],
            ComputeModel::LogNormal { medians, sigma, shift } => {
                let mut rng = named_stream(seed, labels::COMPUTE, agent as u64, task_index);
                let z: f64 = rng.sample(StandardNormal);
                medians[agent] * (shift + (1.0 - shift) * libm::exp(sigma * z))
            }
        }
    }

    pub fn t_max(&self) -> f64 {
        self.nominal().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn t_min(&self) -> f64 {
        self.nominal().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `t̄ = 1 / Σ 1/t_i`, the steady-state time between asynchronous
    /// applies under deterministic laws.
    pub fn harmonic(&self) -> f64 {
        1.0 / self.nominal().iter().map(|t| 1.0 / t).sum::<f64>()
    }
}
