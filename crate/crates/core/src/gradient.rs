//! REINFORCE estimation, momentum combination and estimator noise.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{TabularMDP, Trajectory};
use crate::error::{config, input, Result};
use crate::linalg;
use crate::policy::{exact_policy_gradient, SoftmaxPolicy};

/// How rewards are discounted inside the estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountMode {
    /// Reward at step `h` weighted by `γ^h` (discount from episode start).
    #[default]
    Absolute,
    /// Reward at step `h` weighted by `γ^(h−t)` relative to the scored step.
    RewardToGo,
}

/// `g(θ, τ) = Σ_t ∇log π(a_t|s_t) Σ_{h≥t} w(t, h) r_h` with `w = γ^h` in
/// [`DiscountMode::Absolute`] and `γ^(h−t)` in [`DiscountMode::RewardToGo`].
pub fn reinforce_gradient(
    trajectory: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    mode: DiscountMode,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; policy.dim()];
    reinforce_gradient_into(trajectory, policy, gamma, mode, &mut g)?;
    Ok(g)
}

/// Accumulates the estimate into `out` (which is overwritten).
pub fn reinforce_gradient_into(
    trajectory: &Trajectory,
    policy: &SoftmaxPolicy,
    gamma: f64,
    mode: DiscountMode,
    out: &mut [f64],
) -> Result<()> {
    if trajectory.is_empty() {
        return Err(input("empty trajectory"));
    }
    if out.len() != policy.dim() {
        return Err(config("output buffer does not match policy dimension"));
    }
    for st in &trajectory.steps {
        if st.state >= policy.num_states() || st.action >= policy.num_actions() {
            return Err(config("trajectory step outside policy tables"));
        }
        debug_assert!(
            (policy.log_prob(st.state, st.action) - st.log_prob).abs() <= 1e-9 * (1.0 + st.log_prob.abs()),
            "trajectory was not sampled under this policy"
        );
    }
    out.iter_mut().for_each(|x| *x = 0.0);
    let t_len = trajectory.len();
    let mut tail = 0.0;
    match mode {
        DiscountMode::Absolute => {
            let mut disc = Vec::with_capacity(t_len);
            let mut w = 1.0;
            for _ in 0..t_len {
                disc.push(w);
                w *= gamma;
            }
            for (t, st) in trajectory.steps.iter().enumerate().rev() {
                tail += disc[t] * st.reward;
                if tail != 0.0 {
                    policy.add_score(st.state, st.action, tail, out);
                }
            }
        }
        DiscountMode::RewardToGo => {
            for st in trajectory.steps.iter().rev() {
                tail = st.reward + gamma * tail;
                if tail != 0.0 {
                    policy.add_score(st.state, st.action, tail, out);
                }
            }
        }
    }
    Ok(())
}

/// Bound on `‖E[g] − ∇J‖` caused by truncating at `horizon` steps, for
/// [`DiscountMode::Absolute`]:
/// `r_max M_g Σ_{h≥T} (h+1)γ^h = r_max M_g γ^T ((T+1)/(1−γ) + γ/(1−γ)²)`.
pub fn truncation_bias_bound(gamma: f64, horizon: usize, r_max: f64, m_g: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let t = horizon as f64;
    let one_m = 1.0 - gamma;
    r_max * m_g * libm::pow(gamma, t) * ((t + 1.0) / one_m + gamma / (one_m * one_m))
}

/// A direction produced from the model at global iteration
/// `origin_iteration`. `agent_id` is `None` for directions that do not come
/// from a single agent (synchronous averages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDirection {
    pub values: Vec<f64>,
    pub origin_iteration: u64,
    pub agent_id: Option<usize>,
}

impl UpdateDirection {
    /// The `d₋₁ = 0` direction.
    pub fn zero(dim: usize) -> Self {
        Self { values: vec![0.0; dim], origin_iteration: 0, agent_id: None }
    }
}

/// `(1 − α) d_prev + α g`.
pub fn momentum_combine(d_prev: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    debug_assert_eq!(d_prev.len(), g.len());
    d_prev.iter().zip(g).map(|(d, x)| (1.0 - alpha) * d + alpha * x).collect()
}

/// Empirical estimator noise around the exact gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// `sqrt(Σ‖gᵢ − ∇J‖² / (n − 1))`; 0 when `n = 1`.
    pub sigma_g_hat: f64,
    pub sample_count: usize,
    /// Set when `sample_count = 1` and the estimate is meaningless.
    pub degenerate: bool,
    /// Mean of the `n` estimates.
    pub mean_gradient: Vec<f64>,
    pub exact_gradient: Vec<f64>,
}

impl NoiseEstimate {
    /// `‖mean − ∇J‖`.
    pub fn bias_norm(&self) -> f64 {
        linalg::norm(&linalg::sub(&self.mean_gradient, &self.exact_gradient))
    }
}

/// Draws `num_samples` independent trajectories from `rng` and measures the
/// spread of the estimator around `∇J`.
pub fn estimate_sigma_g<R: Rng + ?Sized>(
    mdp: &TabularMDP,
    policy: &SoftmaxPolicy,
    horizon: usize,
    num_samples: usize,
    mode: DiscountMode,
    rng: &mut R,
) -> Result<NoiseEstimate> {
    if num_samples == 0 {
        return Err(config("noise estimate needs at least one sample"));
    }
    let exact = exact_policy_gradient(mdp, policy)?;
    let dim = policy.dim();
    let mut mean = vec![0.0; dim];
    let mut sq = 0.0;
    let mut g = vec![0.0; dim];
    for _ in 0..num_samples {
        let tr = mdp.sample_trajectory(policy, horizon, rng)?;
        reinforce_gradient_into(&tr, policy, mdp.gamma(), mode, &mut g)?;
        linalg::axpy(&mut mean, 1.0, &g);
        sq += g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    mean.iter_mut().for_each(|x| *x /= num_samples as f64);
    let degenerate = num_samples == 1;
    let sigma = if degenerate { 0.0 } else { libm::sqrt(sq / (num_samples - 1) as f64) };
    Ok(NoiseEstimate {
        sigma_g_hat: sigma,
        sample_count: num_samples,
        degenerate,
        mean_gradient: mean,
        exact_gradient: exact,
    })
}
