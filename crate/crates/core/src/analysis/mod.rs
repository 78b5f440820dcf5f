//! Numerical checks of the convergence machinery against exact oracles.
//!
//! Every check produces a [`LemmaReport`]. Exact identities and strict
//! inequalities are expected to pass; report-only checks record margins
//! for inspection and are never treated as failures.

mod convergence;
mod lemmas;
mod recursion;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use convergence::{
    convergence_report, fisher_estimate, gradient_domination_report, smoothed, BoundInputs, ConvergenceReport,
    Eq23Terms, FisherEstimate, GradDominationParams,
};
pub use lemmas::{ascent_residual_check, step_sum_constant, lr_bound_check, lr_seq_bound_check, signed_pow};
pub use recursion::{
    ab_bounds_check, error_recursion_check, error_recursion_check_with, objective_trace, MdpObjective, Objective,
    QuadraticObjective, RemainderForm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strictness {
    ExactIdentity,
    StrictInequality,
    ReportOnly,
}

impl Strictness {
    pub fn is_enforced(self) -> bool {
        self != Strictness::ReportOnly
    }
}

/// One evaluated instance of a check. For inequalities `lhs ≤ rhs` the
/// violation is `lhs − rhs`; for identities it is the size of the
/// discrepancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSample {
    pub index: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub id: String,
    pub class: Strictness,
    pub tolerance: f64,
    /// Up to [`LemmaReport::SAMPLE_CAP`] samples, in evaluation order.
    pub samples: Vec<LemmaSample>,
    pub sample_count: u64,
    /// Worst sample seen.
    pub worst: Option<LemmaSample>,
    pub max_violation: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl LemmaReport {
    pub const SAMPLE_CAP: usize = 256;

    pub fn new(id: impl Into<String>, class: Strictness, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            class,
            tolerance,
            samples: Vec::new(),
            sample_count: 0,
            worst: None,
            max_violation: f64::NEG_INFINITY,
            passed: true,
            notes: Vec::new(),
        }
    }

    /// Records `lhs ≤ rhs`.
    pub fn push_le(&mut self, index: u64, lhs: f64, rhs: f64) {
        self.push(index, lhs, rhs, lhs - rhs);
    }

    pub fn push(&mut self, index: u64, lhs: f64, rhs: f64, violation: f64) {
        let s = LemmaSample { index, lhs, rhs, violation };
        self.sample_count += 1;
        // NaN compares false and must count as a failure
        if !(violation <= self.max_violation) {
            self.max_violation = if violation.is_nan() { f64::INFINITY } else { violation };
            self.worst = Some(s.clone());
        }
        if self.samples.len() < Self::SAMPLE_CAP {
            self.samples.push(s);
        }
        self.passed = self.max_violation <= self.tolerance;
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    /// Failed and enforced.
    pub fn is_failure(&self) -> bool {
        self.class.is_enforced() && !self.passed
    }
}
