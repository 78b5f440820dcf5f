//! Tabular softmax policy, score function and smoothness constants.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::TabularMDP;
use crate::error::{config, input, Result};
use crate::linalg;

/// Softmax policy over a `num_states × num_actions` logit table stored
/// state-major (`theta[s * num_actions + a]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Uniform policy (all-zero logits).
    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::from_theta(num_states, num_actions, vec![0.0; num_states * num_actions])
    }

    pub fn from_theta(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(config("policy needs at least one state and one action"));
        }
        if theta.len() != num_states * num_actions {
            return Err(config(alloc::format!(
                "theta has {} entries, expected {}",
                theta.len(),
                num_states * num_actions
            )));
        }
        if !linalg::all_finite(&theta) {
            return Err(config("theta contains non-finite logits"));
        }
        Ok(Self { num_states, num_actions, theta })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    /// Checks that the policy matches the MDP's state and action counts.
    pub fn check_matches(&self, mdp: &TabularMDP) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(config(alloc::format!(
                "policy is {}x{} but MDP is {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }

    fn logits(&self, state: usize) -> &[f64] {
        &self.theta[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// Writes `π(·|state)` into `out`, using max-subtraction for stability.
    pub(crate) fn write_probs(&self, state: usize, out: &mut [f64]) {
        softmax_into(self.logits(state), out);
    }

    pub fn action_probs(&self, state: usize) -> Result<Vec<f64>> {
        if state >= self.num_states {
            return Err(config(alloc::format!("state {state} out of range")));
        }
        let mut p = vec![0.0; self.num_actions];
        self.write_probs(state, &mut p);
        Ok(p)
    }

    /// Full `S × A` probability table, state-major.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.theta.len()];
        for (s, row) in out.chunks_exact_mut(self.num_actions).enumerate() {
            self.write_probs(s, row);
        }
        out
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        let row = self.logits(state);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|x| libm::exp(x - m)).sum::<f64>());
        row[action] - lse
    }

    /// `∇_θ log π(action|state)`: zero outside the state's block, where
    /// component `b` is `1{b = action} − π(b|state)`.
    pub fn score(&self, state: usize, action: usize) -> Result<Vec<f64>> {
        if state >= self.num_states || action >= self.num_actions {
            return Err(config("state or action out of range"));
        }
        let mut g = vec![0.0; self.theta.len()];
        self.add_score(state, action, 1.0, &mut g);
        Ok(g)
    }

    /// `out += weight · ∇ log π(action|state)` without allocating.
    pub(crate) fn add_score(&self, state: usize, action: usize, weight: f64, out: &mut [f64]) {
        let a_n = self.num_actions;
        let block = &mut out[state * a_n..(state + 1) * a_n];
        let row = self.logits(state);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| libm::exp(x - m)).sum();
        for (b, (o, x)) in block.iter_mut().zip(row).enumerate() {
            let p = libm::exp(x - m) / z;
            let ind = if b == action { 1.0 } else { 0.0 };
            *o += weight * (ind - p);
        }
    }

    /// Little-endian `f64` bytes of θ in state-major order.
    pub fn theta_to_le_bytes(&self) -> Vec<u8> {
        self.theta.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(num_states: usize, num_actions: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(input("theta byte length is not a multiple of 8"));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_theta(num_states, num_actions, theta)
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(logits) {
        *o = libm::exp(x - m);
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Numerical certificate for the score Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    /// Number of logit configurations evaluated.
    pub points: usize,
    /// Half-width of the logit box searched (last logit pinned to 0).
    pub box_half_width: f64,
    /// Largest spectral norm of `diag(π) − ππᵀ` found.
    pub max_found: f64,
    /// Logits of the maximizer.
    pub argmax: Vec<f64>,
}

/// Score-function bounds `M_g` (norm) and `M_h` (Lipschitz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub m_g: f64,
    pub m_h: f64,
    pub certificate: LipschitzCertificate,
}

/// Score bounds for the tabular softmax class with `num_actions` actions.
///
/// `M_g = √2` is analytic (supremum of `‖e_a − π‖` over the simplex).
/// `M_h` is the largest spectral norm of the log-policy Hessian block
/// `−(diag(π) − ππᵀ)` over a grid of logits; it does not depend on `a`.
pub fn score_bounds(num_actions: usize) -> ScoreBounds {
    const HALF_WIDTH: f64 = 8.0;
    const BUDGET: usize = 20_000;
    if num_actions <= 1 {
        return ScoreBounds {
            m_g: 0.0,
            m_h: 0.0,
            certificate: LipschitzCertificate {
                points: 1,
                box_half_width: HALF_WIDTH,
                max_found: 0.0,
                argmax: vec![0.0; num_actions],
            },
        };
    }
    let free = num_actions - 1;
    // grid points per free logit, at least 3
    let mut per_dim = 3usize;
    while (per_dim + 1).checked_pow(free as u32).is_some_and(|t| t <= BUDGET) && per_dim < 401 {
        per_dim += 1;
    }
    let total = per_dim.pow(free as u32);
    let mut logits = vec![0.0; num_actions];
    let mut probs = vec![0.0; num_actions];
    let mut mat = vec![0.0; num_actions * num_actions];
    let mut best = 0.0;
    let mut argmax = logits.clone();
    for idx in 0..total {
        let mut rem = idx;
        for l in logits.iter_mut().take(free) {
            let g = rem % per_dim;
            rem /= per_dim;
            *l = -HALF_WIDTH + 2.0 * HALF_WIDTH * g as f64 / (per_dim - 1) as f64;
        }
        softmax_into(&logits, &mut probs);
        for r in 0..num_actions {
            for c in 0..num_actions {
                let d = if r == c { probs[r] } else { 0.0 };
                mat[r * num_actions + c] = d - probs[r] * probs[c];
            }
        }
        let ev = linalg::symmetric_eigenvalues(&mat, num_actions);
        let top = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if top > best {
            best = top;
            argmax.copy_from_slice(&logits);
        }
    }
    ScoreBounds {
        m_g: core::f64::consts::SQRT_2,
        m_h: best,
        certificate: LipschitzCertificate {
            points: total,
            box_half_width: HALF_WIDTH,
            max_found: best,
            argmax,
        },
    }
}

/// Smoothness constants of the expected return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub m_g: f64,
    pub m_h: f64,
    pub r_max: f64,
    pub gamma: f64,
    /// Lipschitz constant of `∇J`.
    pub l_g: f64,
    /// Lipschitz constant of `∇²J`, explicit terms only, times `l_h_safety`.
    pub l_h: f64,
    pub l_h_safety: f64,
}

/// `L_g = R(M_g² + M_h)/(1−γ)²` and
/// `L_h = R M_g³ (1+γ)/(1−γ)³ + R M_g M_h/(1−γ)²`.
///
/// The `L_h` bound has an additional `O((1−γ)⁻¹)` remainder with no stated
/// constant; it is omitted and `safety` multiplies the explicit part.
pub fn smoothness_constants(m_g: f64, m_h: f64, r_max: f64, gamma: f64) -> SmoothnessConstants {
    smoothness_constants_with_safety(m_g, m_h, r_max, gamma, 1.0)
}

pub fn smoothness_constants_with_safety(
    m_g: f64,
    m_h: f64,
    r_max: f64,
    gamma: f64,
    safety: f64,
) -> SmoothnessConstants {
    let one_m = 1.0 - gamma;
    let l_g = r_max * (m_g * m_g + m_h) / (one_m * one_m);
    let l_h = r_max * m_g * m_g * m_g * (1.0 + gamma) / (one_m * one_m * one_m)
        + r_max * m_g * m_h / (one_m * one_m);
    SmoothnessConstants { m_g, m_h, r_max, gamma, l_g, l_h: l_h * safety, l_h_safety: safety }
}

/// Exact `J`, `V`, `Q`, visitation measure and gradient at one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub expected_return: f64,
    pub state_values: Vec<f64>,
    pub q_values: Vec<f64>,
    pub visitation: Vec<f64>,
    pub gradient: Vec<f64>,
}

/// Evaluates a policy exactly; see [`exact_policy_gradient`].
pub fn evaluate(mdp: &TabularMDP, policy: &SoftmaxPolicy) -> Result<PolicyEvaluation> {
    policy.check_matches(mdp)?;
    let v = mdp.state_values(policy)?;
    let q = mdp.q_from_values(&v);
    let nu = mdp.visitation_measure(policy)?;
    let a_n = mdp.num_actions();
    let scale = 1.0 / (1.0 - mdp.gamma());
    let mut grad = vec![0.0; policy.dim()];
    for s in 0..mdp.num_states() {
        for a in 0..a_n {
            let w = nu[s * a_n + a];
            if w == 0.0 {
                continue;
            }
            let adv = q[s * a_n + a] - v[s];
            policy.add_score(s, a, scale * w * adv, &mut grad);
        }
    }
    let j = linalg::dot(mdp.start_dist(), &v);
    Ok(PolicyEvaluation { expected_return: j, state_values: v, q_values: q, visitation: nu, gradient: grad })
}

/// `∇J(θ) = (1/(1−γ)) Σ_{s,a} ν(s,a) ∇log π(a|s) A(s,a)`, assembled from
/// the exact value functions and visitation measure.
pub fn exact_policy_gradient(mdp: &TabularMDP, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
    Ok(evaluate(mdp, policy)?.gradient)
}
