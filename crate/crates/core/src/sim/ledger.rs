use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delay and concurrency record of an asynchronous run.
///
/// `concurrency[k]` (`ω_k`) counts the tasks in flight at iteration `k`
/// that started before `k`, including the one applied at `k`; the last
/// entry is taken at termination. With this count every iteration a task
/// spends in flight adds one to both its delay and some `ω_k`, so
/// `Σ applied δ + Σ unapplied δ = Σ_{k=0}^{K} ω_k` holds exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayLedger {
    pub num_agents: usize,
    /// `δ_0 … δ_{K−1}`.
    pub applied_delays: Vec<u64>,
    /// `K − start` for every task still in flight at termination.
    pub unapplied_delays: Vec<u64>,
    /// `ω_0 … ω_K`.
    pub concurrency: Vec<u64>,
}

impl DelayLedger {
    pub fn new(num_agents: usize) -> Self {
        Self { num_agents, ..Self::default() }
    }

    pub fn iterations(&self) -> u64 {
        self.applied_delays.len() as u64
    }

    pub fn total_delay(&self) -> u128 {
        self.applied_delays.iter().chain(&self.unapplied_delays).map(|&d| d as u128).sum()
    }

    pub fn concurrency_sum(&self) -> u128 {
        self.concurrency.iter().map(|&w| w as u128).sum()
    }

    pub fn max_delay(&self) -> u64 {
        self.applied_delays.iter().chain(&self.unapplied_delays).copied().max().unwrap_or(0)
    }

    pub fn max_concurrency(&self) -> u64 {
        self.concurrency.iter().copied().max().unwrap_or(0)
    }

    /// `ω̄ = Σ ω_k / (K + 1)`.
    pub fn mean_concurrency(&self) -> f64 {
        self.concurrency_sum() as f64 / self.concurrency.len().max(1) as f64
    }

    /// Denominator of the average delay, `K − 1 + |C_K|`, and whether the
    /// single-agent substitute `max(K, 1)` was used.
    pub fn delay_denominator(&self) -> (u128, bool) {
        let k = self.iterations() as u128;
        if self.num_agents <= 1 {
            (k.max(1), true)
        } else {
            ((k + self.unapplied_delays.len() as u128).saturating_sub(1).max(1), false)
        }
    }

    /// `δ̄` over applied and unapplied delays.
    pub fn mean_delay(&self) -> f64 {
        self.total_delay() as f64 / self.delay_denominator().0 as f64
    }

    /// Mean of the applied delays only.
    pub fn mean_applied_delay(&self) -> f64 {
        let n = self.applied_delays.len().max(1) as f64;
        self.applied_delays.iter().map(|&d| d as f64).sum::<f64>() / n
    }
}

/// Outcome of [`delay_accounting_check`]; all comparisons are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayAccounting {
    pub iterations: u64,
    pub num_agents: usize,
    pub total_delay: u128,
    pub concurrency_sum: u128,
    pub denominator: u128,
    /// Set when `N = 1` and `max(K, 1)` replaced `K − 1 + |C_K|`.
    pub single_agent_convention: bool,
    pub mean_delay: f64,
    pub mean_concurrency: f64,
}

/// Checks the delay/concurrency identities of an asynchronous run:
/// `Σδ = (K+1)ω̄`, `δ̄ = ω̄(K+1)/(K−1+|C_K|)`, `δ̄ ≤ ω̄ ≤ N`.
pub fn delay_accounting_check(ledger: &DelayLedger, iterations: u64, num_agents: usize) -> Result<DelayAccounting> {
    let fail = |m: alloc::string::String| Err(Error::Check(m));
    if ledger.iterations() != iterations {
        return fail(alloc::format!("ledger has {} applied delays, expected K = {iterations}", ledger.iterations()));
    }
    if ledger.num_agents != num_agents {
        return fail(alloc::format!("ledger is for {} agents, expected {num_agents}", ledger.num_agents));
    }
    if ledger.concurrency.len() as u64 != iterations + 1 {
        return fail(alloc::format!("ledger has {} concurrency entries, expected K + 1", ledger.concurrency.len()));
    }
    if ledger.unapplied_delays.len() > num_agents {
        return fail("more unapplied tasks than agents".into());
    }
    for (k, &d) in ledger.applied_delays.iter().enumerate() {
        if d > k as u64 {
            return fail(alloc::format!("δ_{k} = {d} exceeds k"));
        }
    }
    let total = ledger.total_delay();
    let conc = ledger.concurrency_sum();
    let k1 = iterations as u128 + 1;
    if total != conc {
        return fail(alloc::format!("Σ applied + Σ unapplied delays = {total} but (K+1)·ω̄ = {conc}"));
    }
    let (den, flag) = ledger.delay_denominator();
    let n = num_agents as u128;
    // δ̄ = Σδ/den ≤ ω̄ = Σω/(K+1)
    if total * k1 > conc * den {
        return fail(alloc::format!("δ̄ = {total}/{den} exceeds ω̄ = {conc}/{k1}"));
    }
    if conc > n * k1 {
        return fail(alloc::format!("ω̄ = {conc}/{k1} exceeds N = {n}"));
    }
    let mean_delay = ledger.mean_delay();
    let mean_concurrency = ledger.mean_concurrency();
    let via_identity = mean_concurrency * k1 as f64 / den as f64;
    if (mean_delay - via_identity).abs() > 1e-12 * (1.0 + mean_delay) {
        return fail(alloc::format!("δ̄ = {mean_delay} but ω̄(K+1)/(K−1+|C_K|) = {via_identity}"));
    }
    Ok(DelayAccounting {
        iterations,
        num_agents,
        total_delay: total,
        concurrency_sum: conc,
        denominator: den,
        single_agent_convention: flag,
        mean_delay,
        mean_concurrency,
    })
}
