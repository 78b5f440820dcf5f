use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{step_sum_constant, LemmaReport, Strictness};
use crate::env::TabularMDP;
use crate::error::{config, input, Result};
use crate::linalg;
use crate::policy::{evaluate, SoftmaxPolicy};
use crate::sim::TrainingLog;

/// Constants for the unrolled gap bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub eta0: f64,
    pub l_g: f64,
    pub l_h: f64,
    pub sigma_g: f64,
    pub mean_delay: f64,
    pub eps_g: f64,
}

/// Terms of the bound on `J* − J(θ_K)`, in order of appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eq23Terms {
    /// `η₀ ε_g / 3`.
    pub bias: f64,
    /// `(J* − J(θ₀))/(K+1)²`.
    pub initial: f64,
    /// `c₃ (16η₀²/3) L_g δ̄ / (K+1)^{7/5}`.
    pub delay: f64,
    /// `(η₀²/2) L_g/(K+1)`.
    pub smoothness: f64,
    /// `(8η₀/3) σ_g/(K+1)^{4/5}`.
    pub noise_fast: f64,
    /// `c₁ (8η₀/3) σ_g/(K+1)^{2/5}`.
    pub noise_slow: f64,
    /// `6 c₂ η₀³ L_h/(K+1)^{2/5}`.
    pub curvature: f64,
    pub total: f64,
}

impl Eq23Terms {
    pub fn evaluate(inputs: &BoundInputs, initial_gap: f64, k: u64) -> Self {
        let k1 = k as f64 + 1.0;
        let c1 = libm::sqrt(step_sum_constant(0.8, 1.6));
        let c2 = step_sum_constant(0.8, 1.2);
        let c3 = step_sum_constant(0.8, 0.0);
        let e = inputs.eta0;
        let bias = e * inputs.eps_g / 3.0;
        let initial = initial_gap / (k1 * k1);
        let delay = c3 * 16.0 * e * e / 3.0 * inputs.l_g * inputs.mean_delay / libm::pow(k1, 1.4);
        let smoothness = 0.5 * e * e * inputs.l_g / k1;
        let noise_fast = 8.0 * e / 3.0 * inputs.sigma_g / libm::pow(k1, 0.8);
        let noise_slow = c1 * 8.0 * e / 3.0 * inputs.sigma_g / libm::pow(k1, 0.4);
        let curvature = 6.0 * c2 * e * e * e * inputs.l_h / libm::pow(k1, 0.4);
        let total = bias + initial + delay + smoothness + noise_fast + noise_slow + curvature;
        Self { bias, initial, delay, smoothness, noise_fast, noise_slow, curvature, total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `J* − J(θ_k)` for `k = 0..K`.
    pub gaps: Vec<f64>,
    pub initial_gap: f64,
    pub final_gap: f64,
    /// Least-squares slope of `log gap` against `log(k+1)` over the second
    /// half of the run; `None` if too few positive gaps.
    pub tail_slope: Option<f64>,
    /// The `−2/5` rate the analysis predicts.
    pub reference_slope: f64,
    pub bound: Option<Eq23Terms>,
}

/// Gap sequence, tail slope and, given constants, the bound's terms.
pub fn convergence_report(log: &TrainingLog, inputs: Option<&BoundInputs>) -> Result<ConvergenceReport> {
    let j_star = log.optimal_return.ok_or_else(|| input("run has no optimal return"))?;
    let returns = log.returns().ok_or_else(|| input("run has no exact return column"))?;
    let gaps: Vec<f64> = returns.iter().map(|j| j_star - j).collect();
    let n = gaps.len();
    let tail: Vec<(f64, f64)> = gaps
        .iter()
        .enumerate()
        .skip(n / 2)
        .filter(|(_, &g)| g > 0.0)
        .map(|(k, g)| (libm::log(k as f64 + 1.0), libm::log(*g)))
        .collect();
    let tail_slope = least_squares_slope(&tail);
    let k = log.iterations();
    let bound = inputs.map(|b| Eq23Terms::evaluate(b, gaps[0], k));
    Ok(ConvergenceReport {
        initial_gap: gaps[0],
        final_gap: gaps[n - 1],
        gaps,
        tail_slope,
        reference_slope: -0.4,
        bound,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Trailing mean over at most `window` entries.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub dim: usize,
    /// `F = Σ ν(s,a) ∇log π(a|s) ∇log π(a|s)ᵀ`, row-major.
    pub matrix: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue above the null-space cutoff.
    pub smallest_nonzero: Option<f64>,
    pub rank: usize,
    pub null_cutoff: f64,
    pub max_asymmetry: f64,
}

impl FisherEstimate {
    pub fn is_degenerate(&self) -> bool {
        self.smallest_nonzero.is_none()
    }
}

/// Exact Fisher matrix under the visitation measure and its spectrum.
pub fn fisher_estimate(mdp: &TabularMDP, policy: &SoftmaxPolicy) -> Result<FisherEstimate> {
    const CUTOFF: f64 = 1e-10;
    policy.check_matches(mdp)?;
    let nu = mdp.visitation_measure(policy)?;
    let d = policy.dim();
    let a_n = mdp.num_actions();
    let mut f = vec![0.0; d * d];
    for s in 0..mdp.num_states() {
        for a in 0..a_n {
            let w = nu[s * a_n + a];
            if w == 0.0 {
                continue;
            }
            let g = policy.score(s, a)?;
            let block = s * a_n..(s + 1) * a_n;
            for i in block.clone() {
                for j in block.clone() {
                    f[i * d + j] += w * g[i] * g[j];
                }
            }
        }
    }
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((f[i * d + j] - f[j * d + i]).abs());
        }
    }
    let eigenvalues = linalg::symmetric_eigenvalues(&f, d);
    let nonzero: Vec<f64> = eigenvalues.iter().cloned().filter(|&e| e > CUTOFF).collect();
    Ok(FisherEstimate {
        dim: d,
        matrix: f,
        smallest_nonzero: nonzero.first().copied(),
        rank: nonzero.len(),
        eigenvalues,
        null_cutoff: CUTOFF,
        max_asymmetry: asym,
    })
}

/// Inputs of the relaxed gradient-domination inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradDominationParams {
    pub mu_f: f64,
    pub eps_bias: f64,
    pub m_g: f64,
    pub gamma: f64,
}

impl GradDominationParams {
    pub fn new(mu_f: f64, eps_bias: f64, m_g: f64, gamma: f64) -> Result<Self> {
        if !(mu_f >= 0.0 && eps_bias >= 0.0 && m_g > 0.0 && (0.0..1.0).contains(&gamma)) {
            return Err(config("gradient-domination parameters out of range"));
        }
        Ok(Self { mu_f, eps_bias, m_g, gamma })
    }

    /// `μ = μ_F² / (2 M_g²)`.
    pub fn mu(&self) -> f64 {
        self.mu_f * self.mu_f / (2.0 * self.m_g * self.m_g)
    }

    /// `ε_g = μ_F √ε_bias / (M_g (1−γ))`.
    pub fn eps_g(&self) -> f64 {
        self.mu_f * libm::sqrt(self.eps_bias) / (self.m_g * (1.0 - self.gamma))
    }
}

/// Report-only scatter of `√(2μ)(J* − J(θ))` against `‖∇J(θ)‖ + ε_g`.
pub fn gradient_domination_report(
    mdp: &TabularMDP,
    thetas: &[Vec<f64>],
    params: &GradDominationParams,
) -> Result<LemmaReport> {
    let j_star = mdp.optimal_return()?;
    let scale = libm::sqrt(2.0 * params.mu());
    let eps_g = params.eps_g();
    let mut rep = LemmaReport::new("gradient-domination", Strictness::ReportOnly, 0.0);
    rep.note("mu_F is a surrogate; softmax Fisher matrices are singular along logit shifts");
    for (i, theta) in thetas.iter().enumerate() {
        let p = SoftmaxPolicy::from_theta(mdp.num_states(), mdp.num_actions(), theta.clone())?;
        let ev = evaluate(mdp, &p)?;
        rep.push_le(i as u64, scale * (j_star - ev.expected_return), linalg::norm(&ev.gradient) + eps_g);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bandit_fisher() {
        let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
        let f = fisher_estimate(&mdp, &SoftmaxPolicy::uniform(1, 2).unwrap()).unwrap();
        assert_eq!(f.matrix, vec![0.25, -0.25, -0.25, 0.25]);
        assert_eq!(f.rank, 1);
        assert!((f.smallest_nonzero.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_action_fisher_is_degenerate() {
        let mdp = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.5, vec![1.0], 1.0).unwrap();
        let f = fisher_estimate(&mdp, &SoftmaxPolicy::uniform(1, 1).unwrap()).unwrap();
        assert!(f.is_degenerate());
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[4.0, 2.0, 0.0, 2.0], 2), vec![4.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..50).map(|k| (libm::log(k as f64), -0.4 * libm::log(k as f64) + 1.0)).collect();
        assert!((least_squares_slope(&pts).unwrap() + 0.4).abs() < 1e-12);
    }

    #[test]
    fn domination_params() {
        let p = GradDominationParams::new(0.5, 0.0, 2.0, 0.9).unwrap();
        assert!((p.mu() - 0.25 / 8.0).abs() < 1e-15);
        assert_eq!(p.eps_g(), 0.0);
    }
}
