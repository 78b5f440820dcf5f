//! Server and agent state machines.
//!
//! The server holds `(θ_k, θ_{k−1})` and the last applied direction. An
//! agent receives a [`ModelMessage`], extrapolates to the lookahead point
//! `θ̃ = θ_k + ((1−α)/α)(θ_k − θ_{k−1})`, samples one trajectory there and
//! returns a payload. The server turns the payload into a direction and
//! takes a normalized step of length `η_k`.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::TabularMDP;
use crate::error::{config, input, Result};
use crate::gradient::{momentum_combine, reinforce_gradient, DiscountMode};
use crate::linalg;
use crate::policy::SoftmaxPolicy;

/// `α_k = (k+1)^(−p)` and `η_k = η₀ (k+1)^(−q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedules {
    pub eta0: f64,
    pub p: f64,
    pub q: f64,
}

impl Default for Schedules {
    fn default() -> Self {
        Self { eta0: 0.1, p: 0.8, q: 1.0 }
    }
}

impl Schedules {
    pub fn new(eta0: f64, p: f64, q: f64) -> Result<Self> {
        let s = Self { eta0, p, q };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(config("eta0 must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(config("p must lie in [0, 1)"));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(config("q must be nonnegative"));
        }
        Ok(())
    }

    pub fn alpha(&self, k: u64) -> f64 {
        libm::pow(1.0 / (k as f64 + 1.0), self.p)
    }

    pub fn eta(&self, k: u64) -> f64 {
        self.eta0 * libm::pow(1.0 / (k as f64 + 1.0), self.q)
    }

    /// `(α_k, η_k)`.
    pub fn values(&self, k: u64) -> (f64, f64) {
        (self.alpha(k), self.eta(k))
    }
}

/// `θ̃ = θ_k + ((1−α)/α)(θ_k − θ_{k−1})`.
pub fn lookahead(theta_k: &[f64], theta_prev: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(config(alloc::format!("lookahead weight {alpha} outside (0, 1]")));
    }
    if theta_k.len() != theta_prev.len() {
        return Err(config("parameter vectors differ in length"));
    }
    let c = (1.0 - alpha) / alpha;
    Ok(theta_k.iter().zip(theta_prev).map(|(a, b)| a + c * (a - b)).collect())
}

/// `‖(1−α)(θ_{k−1} − θ_k) + α(θ̃ − θ_k)‖`: the vector whose Hessian image
/// is the second-order correction the lookahead is meant to cancel.
pub fn cancellation_residual(theta_k: &[f64], theta_prev: &[f64], theta_tilde: &[f64], alpha: f64) -> f64 {
    let mut acc = 0.0;
    for ((k, p), t) in theta_k.iter().zip(theta_prev).zip(theta_tilde) {
        let v = (1.0 - alpha) * (p - k) + alpha * (t - k);
        acc += v * v;
    }
    libm::sqrt(acc)
}

/// Where the momentum combination happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Agents ship the raw estimate; the server combines it with the last
    /// applied direction at application time.
    #[default]
    ServerAnchor,
    /// Agents combine with the anchor shipped alongside their model.
    AgentAnchor,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ServerAnchor => "server_anchor",
            Variant::AgentAnchor => "agent_anchor",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "server_anchor" => Ok(Variant::ServerAnchor),
            "agent_anchor" => Ok(Variant::AgentAnchor),
            other => Err(config(alloc::format!("unknown variant `{other}`"))),
        }
    }
}

/// Model broadcast from server to agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMessage {
    /// Global iteration index of `theta`.
    pub k: u64,
    pub theta: Vec<f64>,
    /// `θ_{k−1}`, equal to `theta` at `k = 0`.
    pub theta_prev: Vec<f64>,
    /// Last applied direction (zero before the first apply).
    pub anchor: Vec<f64>,
    /// `α_k`.
    pub alpha: f64,
}

/// One unit of agent work: a received model plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTask {
    pub agent_id: usize,
    /// Per-agent task counter, used to pick the random stream.
    pub task_index: u64,
    pub message: ModelMessage,
}

impl AgentTask {
    pub fn start_iter(&self) -> u64 {
        self.message.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub agent_id: usize,
    pub origin_iter: u64,
    /// What is sent to the server.
    pub payload: Vec<f64>,
    pub theta_tilde: Vec<f64>,
    /// Raw REINFORCE estimate at `θ̃`.
    pub gradient: Vec<f64>,
    pub cancellation_residual: f64,
}

/// Lookahead, one rollout at `θ̃` and the payload for `variant`.
pub fn agent_step<R: Rng + ?Sized>(
    task: &AgentTask,
    mdp: &TabularMDP,
    horizon: usize,
    mode: DiscountMode,
    variant: Variant,
    rng: &mut R,
) -> Result<AgentOutput> {
    let m = &task.message;
    if m.theta.len() != m.theta_prev.len() || m.theta.len() != m.anchor.len() {
        return Err(input("model message vectors differ in length"));
    }
    let theta_tilde = lookahead(&m.theta, &m.theta_prev, m.alpha)?;
    let residual = cancellation_residual(&m.theta, &m.theta_prev, &theta_tilde, m.alpha);
    let policy = SoftmaxPolicy::from_theta(mdp.num_states(), mdp.num_actions(), theta_tilde)?;
    let traj = mdp.sample_trajectory(&policy, horizon, rng)?;
    let g = reinforce_gradient(&traj, &policy, mdp.gamma(), mode)?;
    let payload = match variant {
        Variant::ServerAnchor => g.clone(),
        Variant::AgentAnchor => momentum_combine(&m.anchor, &g, m.alpha),
    };
    Ok(AgentOutput {
        agent_id: task.agent_id,
        origin_iter: m.k,
        payload,
        theta_tilde: policy.into_theta(),
        gradient: g,
        cancellation_residual: residual,
    })
}

/// What one server apply did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyRecord {
    /// Global iteration of the apply (`θ_k → θ_{k+1}`).
    pub k: u64,
    pub origin_iter: u64,
    /// `δ_k = k − origin_iter`.
    pub delay: u64,
    /// Weight `α_{k−δ_k}` used for the combination.
    pub alpha: f64,
    pub eta: f64,
    /// The applied direction before normalization.
    pub direction: Vec<f64>,
    pub direction_norm: f64,
    /// Measured `‖θ_{k+1} − θ_k‖`.
    pub step_norm: f64,
    /// Zero direction: the move was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    k: u64,
    theta: Vec<f64>,
    theta_prev: Vec<f64>,
    d_last: Vec<f64>,
    schedules: Schedules,
    variant: Variant,
}

impl ServerState {
    /// `θ_{−1} = θ₀` and `d_{−1} = 0`.
    pub fn new(theta0: Vec<f64>, schedules: Schedules, variant: Variant) -> Result<Self> {
        schedules.validate()?;
        if theta0.is_empty() || !linalg::all_finite(&theta0) {
            return Err(config("initial parameters must be non-empty and finite"));
        }
        let d = alloc::vec![0.0; theta0.len()];
        Ok(Self { k: 0, theta_prev: theta0.clone(), theta: theta0, d_last: d, schedules, variant })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_prev(&self) -> &[f64] {
        &self.theta_prev
    }

    pub fn last_direction(&self) -> &[f64] {
        &self.d_last
    }

    pub fn schedules(&self) -> &Schedules {
        &self.schedules
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn message(&self) -> ModelMessage {
        ModelMessage {
            k: self.k,
            theta: self.theta.clone(),
            theta_prev: self.theta_prev.clone(),
            anchor: self.d_last.clone(),
            alpha: self.schedules.alpha(self.k),
        }
    }

    /// Applies one payload computed from the model at `origin_iter`.
    pub fn apply(&mut self, payload: &[f64], origin_iter: u64) -> Result<ApplyRecord> {
        if payload.len() != self.theta.len() {
            return Err(input("payload dimension does not match the model"));
        }
        if !linalg::all_finite(payload) {
            return Err(input("payload has non-finite entries"));
        }
        if origin_iter > self.k {
            return Err(input(alloc::format!("payload from iteration {origin_iter} is ahead of the server at {}", self.k)));
        }
        let k = self.k;
        let alpha = self.schedules.alpha(origin_iter);
        let eta = self.schedules.eta(k);
        let direction = match self.variant {
            Variant::ServerAnchor => momentum_combine(&self.d_last, payload, alpha),
            Variant::AgentAnchor => payload.to_vec(),
        };
        let norm = linalg::norm(&direction);
        let skipped = norm == 0.0 || !norm.is_finite();
        let mut next = self.theta.clone();
        if !skipped {
            linalg::axpy(&mut next, eta / norm, &direction);
        }
        let step_norm = linalg::norm(&linalg::sub(&next, &self.theta));
        self.theta_prev = core::mem::replace(&mut self.theta, next);
        self.d_last.clone_from(&direction);
        self.k += 1;
        Ok(ApplyRecord {
            k,
            origin_iter,
            delay: k - origin_iter,
            alpha,
            eta,
            direction,
            direction_norm: norm,
            step_norm,
            skipped,
        })
    }
}
