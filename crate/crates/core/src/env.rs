//! Exactly solvable tabular MDPs.
//!
//! A [`TabularMDP`] carries a dense transition kernel `P[s][a][s']`, a
//! reward table `R[s][a]` bounded in `[0, R_max]`, a discount and a start
//! distribution. Episodes are fixed-length: there are no absorbing states.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg;
use crate::policy::SoftmaxPolicy;
use crate::rng::{self, categorical};

const ROW_TOL: f64 = 1e-12;
const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    start_dist: Vec<f64>,
    r_max: f64,
}

/// One step of a rollout. `log_prob` is `log π(action|state)` at sampling
/// time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_state: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl TabularMDP {
    /// Builds and validates an MDP.
    ///
    /// `transition` is `S·A·S` entries (`[s][a][s']`), `reward` is `S·A`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        start_dist: Vec<f64>,
        r_max: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(config("MDP needs at least one state and one action"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(config("transition table has the wrong size"));
        }
        if reward.len() != num_states * num_actions {
            return Err(config("reward table has the wrong size"));
        }
        if start_dist.len() != num_states {
            return Err(config("start distribution has the wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(config(alloc::format!("discount {gamma} outside [0, 1)")));
        }
        if !(r_max.is_finite() && r_max >= 0.0) {
            return Err(config("reward bound must be finite and nonnegative"));
        }
        for (i, row) in transition.chunks_exact(num_states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(config(alloc::format!(
                    "transition row (s={}, a={}) has a negative or non-finite entry",
                    i / num_actions,
                    i % num_actions
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(config(alloc::format!(
                    "transition row (s={}, a={}) sums to {sum}",
                    i / num_actions,
                    i % num_actions
                )));
            }
        }
        if let Some(r) = reward.iter().find(|&&r| !(0.0..=r_max).contains(&r)) {
            return Err(config(alloc::format!("reward {r} outside [0, {r_max}]")));
        }
        if start_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(config("start distribution has a negative entry"));
        }
        let sum: f64 = start_dist.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(config(alloc::format!("start distribution sums to {sum}")));
        }
        Ok(Self { num_states, num_actions, transition, reward, gamma, start_dist, r_max })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `P(·|s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let off = (s * self.num_actions + a) * n;
        &self.transition[off..off + n]
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut m = self.clone();
        if !(0.0..1.0).contains(&gamma) {
            return Err(config(alloc::format!("discount {gamma} outside [0, 1)")));
        }
        m.gamma = gamma;
        Ok(m)
    }

    /// Samples a fixed-length rollout: `s₀ ~ ρ`, `aₜ ~ π(·|sₜ)`,
    /// `sₜ₊₁ ~ P(·|sₜ, aₜ)`.
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        policy: &SoftmaxPolicy,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Trajectory> {
        policy.check_matches(self)?;
        if horizon == 0 {
            return Err(config("horizon must be at least 1"));
        }
        let mut probs = vec![0.0; self.num_actions];
        let start = categorical(rng, &self.start_dist);
        let mut s = start;
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            policy.write_probs(s, &mut probs);
            let a = categorical(rng, &probs);
            steps.push(Step { state: s, action: a, reward: self.reward(s, a), log_prob: libm::log(probs[a]) });
            s = categorical(rng, self.next_dist(s, a));
        }
        Ok(Trajectory { start_state: start, steps })
    }

    /// Policy-averaged kernel `P_π` (row-major `S × S`) and reward `r_π`.
    pub fn policy_kernel(&self, policy: &SoftmaxPolicy) -> (Vec<f64>, Vec<f64>) {
        let (n, a_n) = (self.num_states, self.num_actions);
        let pi = policy.prob_table();
        let mut p = vec![0.0; n * n];
        let mut r = vec![0.0; n];
        for s in 0..n {
            for a in 0..a_n {
                let w = pi[s * a_n + a];
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.reward(s, a);
                linalg::axpy(&mut p[s * n..(s + 1) * n], w, self.next_dist(s, a));
            }
        }
        (p, r)
    }

    /// Solves `V = r_π + γ P_π V`.
    pub fn state_values(&self, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
        policy.check_matches(self)?;
        let n = self.num_states;
        let (p, r) = self.policy_kernel(policy);
        let a = linalg::identity_minus(&p, self.gamma, n);
        let (v, res) = linalg::solve(&a, &r)?;
        let scale = 1.0f64.max(linalg::max_abs(&v));
        if res > SOLVE_TOL * scale {
            return Err(Error::Numerical { what: "policy evaluation".into(), residual: res });
        }
        Ok(v)
    }

    /// `Q[s][a] = R[s][a] + γ Σ P[s][a][s'] V[s']`.
    pub fn q_from_values(&self, v: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.num_states * self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                q.push(self.reward(s, a) + self.gamma * linalg::dot(self.next_dist(s, a), v));
            }
        }
        q
    }

    pub fn q_values(&self, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
        let v = self.state_values(policy)?;
        Ok(self.q_from_values(&v))
    }

    /// `J(θ) = Σ_s ρ(s) V_π(s)`.
    pub fn expected_return(&self, policy: &SoftmaxPolicy) -> Result<f64> {
        Ok(linalg::dot(&self.start_dist, &self.state_values(policy)?))
    }

    /// Normalized discounted state-action occupancy `ν(s,a) = d(s) π(a|s)`,
    /// where `d = (1−γ)ρ + γ P_πᵀ d` already carries the `(1−γ)` factor.
    pub fn visitation_measure(&self, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
        policy.check_matches(self)?;
        let n = self.num_states;
        let (p, _) = self.policy_kernel(policy);
        let pt = linalg::transpose(&p, n);
        let a = linalg::identity_minus(&pt, self.gamma, n);
        let rhs: Vec<f64> = self.start_dist.iter().map(|x| (1.0 - self.gamma) * x).collect();
        let (d, res) = linalg::solve(&a, &rhs)?;
        if res > SOLVE_TOL {
            return Err(Error::Numerical { what: "visitation measure".into(), residual: res });
        }
        let pi = policy.prob_table();
        let a_n = self.num_actions;
        Ok((0..n * a_n).map(|i| d[i / a_n].max(0.0) * pi[i]).collect())
    }

    /// Optimal values `V*` by value iteration; returns `(V*, residual)`.
    pub fn optimal_values(&self) -> Result<(Vec<f64>, f64)> {
        let n = self.num_states;
        let tol = SOLVE_TOL * (1.0 - self.gamma);
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        for _ in 0..10_000_000u64 {
            for (s, out) in next.iter_mut().enumerate() {
                *out = (0..self.num_actions)
                    .map(|a| self.reward(s, a) + self.gamma * linalg::dot(self.next_dist(s, a), &v))
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            let diff = v.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            core::mem::swap(&mut v, &mut next);
            if diff <= tol {
                return Ok((v, diff));
            }
        }
        Err(Error::Numerical { what: "value iteration".into(), residual: f64::NAN })
    }

    /// `J* = ρ · V*`.
    pub fn optimal_return(&self) -> Result<f64> {
        Ok(linalg::dot(&self.start_dist, &self.optimal_values()?.0))
    }

    /// Seeded random MDP: Dirichlet(1) transition rows and start
    /// distribution, rewards uniform in `[0, 1]`.
    pub fn random(seed: u64, num_states: usize, num_actions: usize, gamma: f64) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(config("random MDP sizes must be at least 1"));
        }
        let mut rng = rng::named_stream(seed, rng::labels::MDP, num_states as u64, num_actions as u64);
        let dirichlet = |len: usize, rng: &mut rng::StreamRng| -> Vec<f64> {
            let mut w: Vec<f64> = (0..len).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= z);
            w
        };
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            transition.extend(dirichlet(num_states, &mut rng));
        }
        let reward = (0..num_states * num_actions).map(|_| rng.random::<f64>()).collect();
        let start = dirichlet(num_states, &mut rng);
        Self::new(num_states, num_actions, transition, reward, gamma, start, 1.0)
    }

    /// `size × size` grid with actions up/right/down/left; moves into walls
    /// stay put. Reward 1 for any action taken in the bottom-right goal
    /// cell, 0 elsewhere. Episodes start in the top-left cell.
    pub fn gridworld(size: usize, gamma: f64) -> Result<Self> {
        if size == 0 {
            return Err(config("gridworld size must be at least 1"));
        }
        let n = size * size;
        let goal = n - 1;
        let mut transition = vec![0.0; n * 4 * n];
        let mut reward = vec![0.0; n * 4];
        for s in 0..n {
            let (r, c) = (s / size, s % size);
            for a in 0..4 {
                let next = match a {
                    0 if r > 0 => s - size,
                    1 if c + 1 < size => s + 1,
                    2 if r + 1 < size => s + size,
                    3 if c > 0 => s - 1,
                    _ => s,
                };
                transition[(s * 4 + a) * n + next] = 1.0;
                if s == goal {
                    reward[s * 4 + a] = 1.0;
                }
            }
        }
        let mut start = vec![0.0; n];
        start[0] = 1.0;
        Self::new(n, 4, transition, reward, gamma, start, 1.0)
    }

    /// `length`-state chain with actions left (0) and right (1).
    ///
    /// Right advances one state and left retreats one, both clamped at the
    /// ends. Each move slips with probability `slip` and the agent stays
    /// put instead. Left in state 0 pays 0.1; right at the last state pays
    /// 1. Episodes start in state 0.
    pub fn chain(length: usize, slip: f64, gamma: f64) -> Result<Self> {
        if length == 0 {
            return Err(config("chain length must be at least 1"));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(config("slip probability outside [0, 1]"));
        }
        let n = length;
        let mut transition = vec![0.0; n * 2 * n];
        let mut reward = vec![0.0; n * 2];
        for s in 0..n {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            transition[(s * 2) * n + left] += 1.0 - slip;
            transition[(s * 2) * n + s] += slip;
            transition[(s * 2 + 1) * n + right] += 1.0 - slip;
            transition[(s * 2 + 1) * n + s] += slip;
        }
        reward[0] = 0.1;
        reward[(n - 1) * 2 + 1] = 1.0;
        let mut start = vec![0.0; n];
        start[0] = 1.0;
        Self::new(n, 2, transition, reward, gamma, start, 1.0)
    }

    /// Single-state multi-armed bandit with `γ = 0`.
    pub fn bandit(arm_rewards: &[f64]) -> Result<Self> {
        let a_n = arm_rewards.len();
        if a_n == 0 {
            return Err(config("bandit needs at least one arm"));
        }
        let r_max = arm_rewards.iter().cloned().fold(0.0, f64::max);
        Self::new(1, a_n, vec![1.0; a_n], arm_rewards.to_vec(), 0.0, vec![1.0], r_max)
    }
}

/// Smallest horizon `T` with `γ^T ≤ rel_tol`, so the tail of the discounted
/// return is at most `rel_tol · R_max/(1−γ)`.
pub fn truncation_horizon(gamma: f64, rel_tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let t = libm::ceil(libm::log(rel_tol) / libm::log(gamma));
    (t as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(reward: f64, gamma: f64, actions: usize) -> TabularMDP {
        TabularMDP::new(1, actions, vec![1.0; actions], vec![reward; actions], gamma, vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn invalid_rows_rejected() {
        let bad = TabularMDP::new(2, 1, vec![0.5, 0.6, 1.0, 0.0], vec![0.0, 0.0], 0.9, vec![1.0, 0.0], 1.0);
        assert!(matches!(bad, Err(Error::Config(_))));
        let neg = TabularMDP::new(2, 1, vec![1.5, -0.5, 1.0, 0.0], vec![0.0, 0.0], 0.9, vec![1.0, 0.0], 1.0);
        assert!(neg.is_err());
        let rew = TabularMDP::new(1, 1, vec![1.0], vec![2.0], 0.9, vec![1.0], 1.0);
        assert!(rew.is_err());
        let start = TabularMDP::new(1, 1, vec![1.0], vec![0.0], 0.9, vec![0.9], 1.0);
        assert!(start.is_err());
        assert!(TabularMDP::random(0, 0, 2, 0.9).is_err());
    }

    #[test]
    fn single_state_trajectory_stays_put() {
        let mdp = single_state(1.0, 0.9, 3);
        let pol = SoftmaxPolicy::uniform(1, 3).unwrap();
        let mut rng = rng::named_stream(0, "t", 0, 0);
        let tr = mdp.sample_trajectory(&pol, 3, &mut rng).unwrap();
        assert_eq!(tr.len(), 3);
        assert!(tr.steps.iter().all(|s| s.state == 0 && s.reward == 1.0));
    }

    #[test]
    fn deterministic_chain_is_followed() {
        // s -> s+1 for the single action, last state loops
        let n = 4;
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            p[s * n + (s + 1).min(n - 1)] = 1.0;
        }
        let mdp = TabularMDP::new(n, 1, p, vec![0.0; n], 0.5, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let pol = SoftmaxPolicy::uniform(n, 1).unwrap();
        let tr = mdp.sample_trajectory(&pol, 2, &mut rng::named_stream(3, "t", 0, 0)).unwrap();
        let visited: Vec<usize> = tr.steps.iter().map(|s| s.state).collect();
        assert_eq!(visited, vec![0, 1]);
    }

    #[test]
    fn trajectory_errors() {
        let mdp = single_state(1.0, 0.9, 2);
        let pol = SoftmaxPolicy::uniform(1, 3).unwrap();
        let mut rng = rng::named_stream(0, "t", 0, 0);
        assert!(matches!(mdp.sample_trajectory(&pol, 3, &mut rng), Err(Error::Config(_))));
        let pol = SoftmaxPolicy::uniform(1, 2).unwrap();
        assert!(mdp.sample_trajectory(&pol, 0, &mut rng).is_err());
    }

    #[test]
    fn gridworld_rollout_is_reproducible() {
        let mdp = TabularMDP::gridworld(5, 0.9).unwrap();
        let pol = SoftmaxPolicy::uniform(25, 4).unwrap();
        let a = mdp.sample_trajectory(&pol, 100, &mut rng::named_stream(42, "t", 0, 0)).unwrap();
        let b = mdp.sample_trajectory(&pol, 100, &mut rng::named_stream(42, "t", 0, 0)).unwrap();
        assert_eq!(a, b);
        for st in &a.steps {
            assert_eq!(st.reward, mdp.reward(st.state, st.action));
        }
    }

    #[test]
    fn geometric_value() {
        let mdp = single_state(1.0, 0.9, 2);
        let pol = SoftmaxPolicy::uniform(1, 2).unwrap();
        let v = mdp.state_values(&pol).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!((mdp.expected_return(&pol).unwrap() - 10.0).abs() < 1e-12);
        let q = mdp.q_values(&pol).unwrap();
        assert!(q.iter().all(|x| (x - 10.0).abs() < 1e-12));
        assert!((mdp.optimal_return().unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reward_values() {
        let mdp = TabularMDP::random(3, 4, 2, 0.9).unwrap();
        let zero = TabularMDP::new(4, 2, mdp.transition.clone(), vec![0.0; 8], 0.9, mdp.start_dist.clone(), 1.0).unwrap();
        let pol = SoftmaxPolicy::uniform(4, 2).unwrap();
        assert!(zero.state_values(&pol).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(zero.expected_return(&pol).unwrap(), 0.0);
    }

    #[test]
    fn bandit_values() {
        let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
        let pol = SoftmaxPolicy::uniform(1, 2).unwrap();
        assert_eq!(mdp.q_values(&pol).unwrap(), vec![1.0, 0.0]);
        assert!((mdp.expected_return(&pol).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mdp.optimal_return().unwrap(), 1.0);
    }

    #[test]
    fn myopic_q_is_reward() {
        let mdp = TabularMDP::random(9, 3, 3, 0.0).unwrap();
        let pol = SoftmaxPolicy::from_theta(3, 3, vec![0.1, 0.5, -0.3, 1.0, 0.0, 0.2, -1.0, 2.0, 0.0]).unwrap();
        let q = mdp.q_values(&pol).unwrap();
        for (x, r) in q.iter().zip(mdp.rewards()) {
            assert!((x - r).abs() < 1e-15);
        }
    }

    #[test]
    fn visitation_single_state_is_policy() {
        let mdp = single_state(0.5, 0.7, 3);
        let pol = SoftmaxPolicy::from_theta(1, 3, vec![0.2, -0.4, 1.0]).unwrap();
        let nu = mdp.visitation_measure(&pol).unwrap();
        let pi = pol.action_probs(0).unwrap();
        for (a, b) in nu.iter().zip(&pi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn visitation_myopic_limit() {
        let base = TabularMDP::random(11, 4, 3, 0.5).unwrap();
        let mdp = base.with_gamma(1e-12).unwrap();
        let pol = SoftmaxPolicy::from_theta(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let nu = mdp.visitation_measure(&pol).unwrap();
        let pi = pol.prob_table();
        for s in 0..4 {
            for a in 0..3 {
                assert!((nu[s * 3 + a] - mdp.start_dist()[s] * pi[s * 3 + a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_mdp_is_deterministic_and_valid() {
        let a = TabularMDP::random(5, 3, 2, 0.9).unwrap();
        let b = TabularMDP::random(5, 3, 2, 0.9).unwrap();
        assert_eq!(a, b);
        let one = TabularMDP::random(5, 1, 3, 0.9).unwrap();
        assert_eq!(one.num_states(), 1);
        assert!(one.transition.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn horizon_rule() {
        assert_eq!(truncation_horizon(0.0, 1e-6), 1);
        let t = truncation_horizon(0.9, 1e-6);
        assert!(libm::pow(0.9, t as f64) <= 1e-6);
        assert!(libm::pow(0.9, (t - 1) as f64) > 1e-6);
    }
}
