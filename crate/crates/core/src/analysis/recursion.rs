use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{LemmaReport, Strictness};
use crate::afedpg::{lookahead, Schedules, ServerState, Variant};
use crate::env::TabularMDP;
use crate::error::{config, input, Result};
use crate::linalg;
use crate::policy::{exact_policy_gradient, SoftmaxPolicy};
use crate::rng::{labels, named_stream};
use crate::sim::TraceRow;

/// A smooth objective with gradient and Hessian-vector products.
pub trait Objective {
    fn dim(&self) -> usize;
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

/// Expected return of an MDP. Hessian-vector products are central
/// differences of the exact gradient with step `1e-5 (1 + ‖θ‖)`.
#[derive(Debug, Clone)]
pub struct MdpObjective<'a> {
    pub mdp: &'a TabularMDP,
}

impl Objective for MdpObjective<'_> {
    fn dim(&self) -> usize {
        self.mdp.num_states() * self.mdp.num_actions()
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = SoftmaxPolicy::from_theta(self.mdp.num_states(), self.mdp.num_actions(), theta.to_vec())?;
        exact_policy_gradient(self.mdp, &p)
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let nv = linalg::norm(v);
        if nv == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let h = 1e-5 * (1.0 + linalg::norm(theta));
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        linalg::axpy(&mut plus, h / nv, v);
        linalg::axpy(&mut minus, -h / nv, v);
        let gp = self.gradient(&plus)?;
        let gm = self.gradient(&minus)?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h) * nv).collect())
    }
}

/// `J(θ) = bᵀθ − ½ θᵀAθ` with symmetric `A`; the Hessian is exactly `−A`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if a.len() != n * n {
            return Err(config("quadratic matrix has the wrong size"));
        }
        for i in 0..n {
            for j in 0..i {
                if a[i * n + j] != a[j * n + i] {
                    return Err(config("quadratic matrix must be symmetric"));
                }
            }
        }
        Ok(Self { a, b })
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(linalg::sub(&self.b, &linalg::mat_vec(&self.a, theta)))
    }

    fn hvp(&self, _theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(linalg::scale(&linalg::mat_vec(&self.a, v), -1.0))
    }
}

/// Asynchronous run against an arbitrary objective: `num_agents` agents of
/// equal speed apply in round-robin order, and each payload is the exact
/// gradient at the agent's lookahead point plus Gaussian noise of scale
/// `noise`. Always uses server-side anchoring.
pub fn objective_trace<O: Objective + ?Sized>(
    obj: &O,
    theta0: Vec<f64>,
    schedules: Schedules,
    num_agents: usize,
    iterations: u64,
    noise: f64,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    if num_agents == 0 {
        return Err(config("need at least one agent"));
    }
    let mut server = ServerState::new(theta0, schedules, Variant::ServerAnchor)?;
    let mut held = vec![server.message(); num_agents];
    let mut out = Vec::with_capacity(iterations as usize);
    for k in 0..iterations {
        let agent = (k % num_agents as u64) as usize;
        let msg = &held[agent];
        let tilde = lookahead(&msg.theta, &msg.theta_prev, msg.alpha)?;
        let mut g = obj.gradient(&tilde)?;
        let mut rng = named_stream(seed, labels::NOISE, agent as u64, k);
        for x in g.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += noise * z;
        }
        let (theta, theta_prev) = (server.theta().to_vec(), server.theta_prev().to_vec());
        let rec = server.apply(&g, msg.k)?;
        out.push(TraceRow {
            k,
            origin_iter: rec.origin_iter,
            alpha: rec.alpha,
            theta,
            theta_prev,
            theta_tilde: tilde,
            gradient: g,
            direction: rec.direction,
        });
        held[agent] = server.message();
    }
    Ok(out)
}

/// Which Taylor remainders enter the expansion of `e_k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RemainderForm {
    /// `A_k`, `B_k` as documented on [`error_recursion_check`].
    #[default]
    Corrected,
    /// `A_k = ∇J(θ_{k−1}) − ∇J(θ_k) + ∇²J(θ_k)(θ_{k−1} − θ_k)` and
    /// `B_k = ∇J(θ̃_k) − ∇J(θ_k) + ∇²J(θ_k)(θ_{k−1} − θ_k)`. The expansion
    /// does not telescope with these, so this form serves as a control.
    AsPrinted,
}

struct Terms {
    direct: Vec<f64>,
    expansion: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// `e_k` directly and through `α ξ_j + (1−α) e_{k−1} + (1−α) A_k + α (B_k + C_k)`
/// with Taylor remainders
/// `A_k = ∇J(θ_{k−1}) − ∇J(θ_k) − ∇²J(θ_k)(θ_{k−1} − θ_k)`,
/// `B_k = ∇J(θ̃_k) − ∇J(θ_k) − ∇²J(θ_k)(θ̃_k − θ_k)` and
/// `C_k = ∇J(θ̃_j) − ∇J(θ̃_k)`, where `θ̃_k` is the lookahead from the
/// current pair with the weight `α` actually used.
fn expand<O: Objective + ?Sized>(obj: &O, trace: &[TraceRow], k: usize, form: RemainderForm) -> Result<Terms> {
    let row = &trace[k];
    let alpha = row.alpha;
    let grad_k = obj.gradient(&row.theta)?;
    let grad_prev = obj.gradient(&row.theta_prev)?;
    let d_prev = if k == 0 { vec![0.0; row.theta.len()] } else { trace[k - 1].direction.clone() };
    let e_prev = linalg::sub(&d_prev, &grad_prev);
    let direct = linalg::sub(&row.direction, &grad_k);
    let grad_tilde_j = obj.gradient(&row.theta_tilde)?;
    let xi = linalg::sub(&row.gradient, &grad_tilde_j);
    let tilde_k = lookahead(&row.theta, &row.theta_prev, alpha)?;
    let grad_tilde_k = obj.gradient(&tilde_k)?;
    let step_prev = linalg::sub(&row.theta_prev, &row.theta);
    let step_tilde = linalg::sub(&tilde_k, &row.theta);
    let h_prev = obj.hvp(&row.theta, &step_prev)?;
    let h_tilde = obj.hvp(&row.theta, &step_tilde)?;
    let n = row.theta.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut expansion = vec![0.0; n];
    for i in 0..n {
        match form {
            RemainderForm::Corrected => {
                a[i] = grad_prev[i] - grad_k[i] - h_prev[i];
                b[i] = grad_tilde_k[i] - grad_k[i] - h_tilde[i];
            }
            RemainderForm::AsPrinted => {
                a[i] = grad_prev[i] - grad_k[i] + h_prev[i];
                b[i] = grad_tilde_k[i] - grad_k[i] + h_prev[i];
            }
        }
        c[i] = grad_tilde_j[i] - grad_tilde_k[i];
        expansion[i] = alpha * xi[i] + (1.0 - alpha) * e_prev[i] + (1.0 - alpha) * a[i] + alpha * (b[i] + c[i]);
    }
    Ok(Terms { direct, expansion, a, b, c })
}

/// Recomputes `e_k` both ways at the iterations in `indices`.
///
/// The expansion assumes the applied direction chains off the previously
/// applied one, so runs that combine at the agent are refused.
pub fn error_recursion_check<O: Objective + ?Sized>(
    obj: &O,
    trace: &[TraceRow],
    variant: Variant,
    indices: &[usize],
    tolerance: f64,
) -> Result<LemmaReport> {
    error_recursion_check_with(obj, trace, variant, indices, tolerance, RemainderForm::Corrected)
}

/// [`error_recursion_check`] with a chosen remainder form.
pub fn error_recursion_check_with<O: Objective + ?Sized>(
    obj: &O,
    trace: &[TraceRow],
    variant: Variant,
    indices: &[usize],
    tolerance: f64,
    form: RemainderForm,
) -> Result<LemmaReport> {
    if variant == Variant::AgentAnchor {
        return Err(input(
            "the error expansion needs server-side anchoring; agent-anchored directions chain off a stale anchor",
        ));
    }
    let mut rep = LemmaReport::new("error-recursion", Strictness::ExactIdentity, tolerance);
    for &k in indices {
        if k >= trace.len() {
            return Err(input(alloc::format!("iteration {k} is not in the trace")));
        }
        let t = expand(obj, trace, k, form)?;
        let diff = linalg::norm(&linalg::sub(&t.direct, &t.expansion));
        rep.push(k as u64, linalg::norm(&t.direct), linalg::norm(&t.expansion), diff);
    }
    Ok(rep)
}

/// Report-only bounds `‖A_k‖ ≤ L_h η_{k−1}²`,
/// `‖B_k‖ ≤ L_h ((1−α)/α)² η_{k−1}²` and
/// `‖C_k‖ ≤ 2 δ_k L_g η_{k−δ_k} / α_{k−1}`, for `k ≥ 1` in `indices`.
pub fn ab_bounds_check<O: Objective + ?Sized>(
    obj: &O,
    trace: &[TraceRow],
    schedules: &Schedules,
    l_g: f64,
    l_h: f64,
    indices: &[usize],
) -> Result<[LemmaReport; 3]> {
    let mut ra = LemmaReport::new("bound-A", Strictness::ReportOnly, 0.0);
    let mut rb = LemmaReport::new("bound-B", Strictness::ReportOnly, 0.0);
    let mut rc = LemmaReport::new("bound-C", Strictness::ReportOnly, 0.0);
    for &k in indices.iter().filter(|&&k| k >= 1) {
        if k >= trace.len() {
            return Err(input(alloc::format!("iteration {k} is not in the trace")));
        }
        let row = &trace[k];
        let t = expand(obj, trace, k, RemainderForm::Corrected)?;
        let km1 = k as u64 - 1;
        let eta_prev = schedules.eta(km1);
        let ratio = (1.0 - row.alpha) / row.alpha;
        let delay = row.k - row.origin_iter;
        ra.push_le(row.k, linalg::norm(&t.a), l_h * eta_prev * eta_prev);
        rb.push_le(row.k, linalg::norm(&t.b), l_h * ratio * ratio * eta_prev * eta_prev);
        let c_rhs = 2.0 * delay as f64 * l_g * schedules.eta(row.origin_iter) / schedules.alpha(km1);
        rc.push_le(row.k, linalg::norm(&t.c), c_rhs);
    }
    for r in [&mut ra, &mut rb] {
        r.note("L_h omits the unstated O((1-gamma)^-1) remainder");
    }
    Ok([ra, rb, rc])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> QuadraticObjective {
        QuadraticObjective::new(vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0], vec![1.0, -1.0, 0.5]).unwrap()
    }

    #[test]
    fn quadratic_recursion_is_exact() {
        let q = quad();
        let trace = objective_trace(&q, vec![0.0; 3], Schedules::default(), 3, 60, 0.3, 1).unwrap();
        let idx: Vec<usize> = (0..60).collect();
        let rep = error_recursion_check(&q, &trace, Variant::ServerAnchor, &idx, 1e-12).unwrap();
        assert!(rep.passed, "{:?}", rep.worst);
    }

    #[test]
    fn first_iteration_error_is_noise() {
        let q = quad();
        let trace = objective_trace(&q, vec![0.3, 0.1, -0.2], Schedules::default(), 1, 1, 0.5, 2).unwrap();
        let t = expand(&q, &trace, 0, RemainderForm::Corrected).unwrap();
        let xi = linalg::sub(&trace[0].gradient, &q.gradient(&trace[0].theta_tilde).unwrap());
        assert!(linalg::max_abs(&linalg::sub(&t.direct, &xi)) < 1e-15);
    }

    #[test]
    fn printed_remainders_do_not_telescope() {
        let q = quad();
        let trace = objective_trace(&q, vec![0.0; 3], Schedules::default(), 2, 30, 0.3, 1).unwrap();
        let idx: Vec<usize> = (1..30).collect();
        let rep =
            error_recursion_check_with(&q, &trace, Variant::ServerAnchor, &idx, 1e-12, RemainderForm::AsPrinted).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn agent_anchor_is_refused() {
        let q = quad();
        let trace = objective_trace(&q, vec![0.0; 3], Schedules::default(), 2, 3, 0.0, 1).unwrap();
        assert!(matches!(
            error_recursion_check(&q, &trace, Variant::AgentAnchor, &[1], 1e-12),
            Err(crate::Error::Input(_))
        ));
    }

    #[test]
    fn quadratic_remainders_vanish() {
        let q = quad();
        let trace = objective_trace(&q, vec![0.0; 3], Schedules::default(), 1, 20, 0.1, 4).unwrap();
        let idx: Vec<usize> = (1..20).collect();
        let [a, b, c] = ab_bounds_check(&q, &trace, &Schedules::default(), 1.0, 1.0, &idx).unwrap();
        assert!(a.max_violation <= 1e-12 && b.max_violation <= 1e-12);
        // single agent: no delay, so C_k = 0 against a zero bound
        assert!(c.samples.iter().all(|s| s.lhs == 0.0 && s.rhs == 0.0));
    }
}
