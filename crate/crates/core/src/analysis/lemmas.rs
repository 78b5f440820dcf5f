use super::{LemmaReport, Strictness};
use crate::error::{input, Result};
use crate::policy::SmoothnessConstants;
use crate::sim::TrainingLog;

/// Per-iteration ascent inequality
/// `−J(θ_{k+1}) ≤ −J(θ_k) − η_k‖∇J(θ_k)‖/3 + 8η_k‖e_k‖/3 + L_g η_k²/2`.
pub fn ascent_residual_check(log: &TrainingLog, constants: &SmoothnessConstants) -> Result<LemmaReport> {
    let returns = log.returns().ok_or_else(|| input("run has no exact return column"))?;
    let mut rep = LemmaReport::new("ascent", Strictness::StrictInequality, 1e-9);
    for (i, row) in log.rows.iter().enumerate() {
        let (Some(g), Some(e)) = (row.grad_norm, row.error_norm) else {
            return Err(input("run has no exact gradient columns"));
        };
        let lhs = -returns[i + 1];
        let rhs = -returns[i] - row.eta * g / 3.0 + 8.0 * row.eta * e / 3.0 + 0.5 * constants.l_g * row.eta * row.eta;
        rep.push_le(row.k, lhs, rhs);
    }
    Ok(rep)
}

/// `x^y` that also accepts a negative base when `y` is an integer (odd
/// powers keep the sign); NaN otherwise.
pub fn signed_pow(x: f64, y: f64) -> f64 {
    if x >= 0.0 {
        return libm::pow(x, y);
    }
    let r = libm::round(y);
    if (y - r).abs() > 1e-9 {
        return f64::NAN;
    }
    let m = libm::pow(-x, y);
    if (r as i64) % 2 == 0 {
        m
    } else {
        -m
    }
}

/// `c(p,q) = 2^{q−p}/(1−p) · a · exp((1−p) 2^p a^{1−p})` with
/// `a = max((q/((1−p)2^p))^{1/(1−p)}, (2(q−p)/(1−p)²)^{1/(1−p)})`,
/// evaluated as written.
pub fn step_sum_constant(p: f64, q: f64) -> f64 {
    let e = 1.0 / (1.0 - p);
    let two_p = libm::pow(2.0, p);
    let a1 = signed_pow(q / ((1.0 - p) * two_p), e);
    let a2 = signed_pow(2.0 * (q - p) / ((1.0 - p) * (1.0 - p)), e);
    let a = a1.max(a2);
    libm::pow(2.0, q - p) / (1.0 - p) * a * libm::exp((1.0 - p) * two_p * libm::pow(a, 1.0 - p))
}

/// `α_k = (c/(k+c))^p`: checks `1 − α_{k+1} ≤ α_{k+1}/α_k` for every
/// `k < k_max` and `Π_{i=k}^{K−1}(1 − α_{i+1}) ≤ α_K/α_k` on a grid of
/// `(k, K)` pairs. Returns the step report and the product report; product
/// samples are indexed by `K`.
pub fn lr_bound_check(p: f64, c: f64, k_max: u64) -> [LemmaReport; 2] {
    let alpha = |k: u64| libm::pow(c / (k as f64 + c), p);
    let mut rep = LemmaReport::new(
        alloc::format!("lr-bound(p={p}, c={c})"),
        Strictness::ExactIdentity,
        1e-12,
    );
    for k in 0..k_max {
        let (a0, a1) = (alpha(k), alpha(k + 1));
        rep.push_le(k, 1.0 - a1, a1 / a0);
    }
    let mut ks = alloc::vec![0u64];
    let mut x = 1u64;
    while x < k_max {
        ks.push(x);
        x = (x * 3).div_ceil(2).max(x + 1);
    }
    ks.push(k_max);
    let mut prod_rep = LemmaReport::new(alloc::format!("lr-bound-product(p={p}, c={c})"), Strictness::ExactIdentity, 1e-12);
    for (i, &k) in ks.iter().enumerate() {
        for &big_k in ks.iter().skip(i + 1).step_by(4) {
            let mut prod = 1.0;
            for j in k..big_k {
                prod *= 1.0 - alpha(j + 1);
            }
            let rhs = alpha(big_k) / alpha(k);
            prod_rep.push_le(big_k, prod, rhs);
        }
    }
    [rep, prod_rep]
}

/// `Σ_{k<K} η_k Π_{i=k+1}^{K−1}(1 − α_i) ≤ c(p,q) η_K/α_K` for every
/// `K = 1..k_max`, via `S_{K+1} = (1 − α_K) S_K + η_K`.
pub fn lr_seq_bound_check(p: f64, q: f64, eta0: f64, k_max: u64, class: Strictness) -> LemmaReport {
    let alpha = |k: u64| libm::pow(1.0 / (k as f64 + 1.0), p);
    let eta = |k: u64| eta0 * libm::pow(1.0 / (k as f64 + 1.0), q);
    let c = step_sum_constant(p, q);
    let mut rep = LemmaReport::new(alloc::format!("lr-seq-bound(p={p}, q={q})"), class, 0.0);
    rep.note(alloc::format!("c(p,q) = {c:e}"));
    if c <= 0.0 {
        rep.note("c(p,q) is not positive, so the right-hand side cannot bound a positive sum");
    }
    let mut s = 0.0;
    for big_k in 1..=k_max {
        s = (1.0 - alpha(big_k - 1)) * s + eta(big_k - 1);
        rep.push_le(big_k, s, c * eta(big_k) / alpha(big_k));
    }
    rep
}
