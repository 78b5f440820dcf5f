use alloc::vec::Vec;

use super::{DelayLedger, LogRow, RunConfig, TraceRow, TrainingLog};
use crate::afedpg::{ApplyRecord, ServerState};
use crate::env::TabularMDP;
use crate::error::Result;
use crate::linalg;
use crate::policy::{evaluate, SoftmaxPolicy};

/// Context of one apply supplied by the runner.
#[derive(Debug, Clone, Copy)]
pub struct ApplyEvent<'a> {
    pub sim_time: f64,
    pub agent_id: Option<usize>,
    pub concurrency: u64,
    /// Trajectories behind this payload.
    pub samples: u64,
    pub cancellation_residual: f64,
    pub theta_tilde: &'a [f64],
    pub gradient: &'a [f64],
}

/// Applies payloads to a server and builds the [`TrainingLog`]. Shared by
/// the simulated runners and the threaded one.
#[derive(Debug)]
pub struct Recorder<'a> {
    mdp: &'a TabularMDP,
    exact: bool,
    rows: Vec<LogRow>,
    trace: Option<Vec<TraceRow>>,
    samples: u64,
    zero_events: u64,
    initial_return: Option<f64>,
}

impl<'a> Recorder<'a> {
    pub fn new(mdp: &'a TabularMDP, cfg: &RunConfig) -> Self {
        let cap = cfg.iterations.min(1 << 20) as usize;
        Self {
            mdp,
            exact: cfg.exact_metrics,
            rows: Vec::with_capacity(cap),
            trace: cfg.record_trace.then(Vec::new),
            samples: 0,
            zero_events: 0,
            initial_return: None,
        }
    }

    fn policy(&self, theta: &[f64]) -> Result<SoftmaxPolicy> {
        SoftmaxPolicy::from_theta(self.mdp.num_states(), self.mdp.num_actions(), theta.to_vec())
    }

    /// Applies `payload` and logs the apply.
    pub fn apply(
        &mut self,
        server: &mut ServerState,
        payload: &[f64],
        origin_iter: u64,
        ev: ApplyEvent<'_>,
    ) -> Result<ApplyRecord> {
        let exact = if self.exact { Some(evaluate(self.mdp, &self.policy(server.theta())?)?) } else { None };
        let before = self.trace.is_some().then(|| (server.theta().to_vec(), server.theta_prev().to_vec()));
        let rec = server.apply(payload, origin_iter)?;
        debug_assert!(self.rows.last().is_none_or(|r| r.sim_time <= ev.sim_time));
        self.samples += ev.samples;
        if rec.skipped {
            self.zero_events += 1;
        }
        let (ret, grad_norm, err_norm) = match &exact {
            Some(e) => {
                if self.initial_return.is_none() {
                    self.initial_return = Some(e.expected_return);
                }
                let err = linalg::norm(&linalg::sub(&rec.direction, &e.gradient));
                (Some(e.expected_return), Some(linalg::norm(&e.gradient)), Some(err))
            }
            None => (None, None, None),
        };
        self.rows.push(LogRow {
            k: rec.k,
            sim_time: ev.sim_time,
            agent_id: ev.agent_id,
            delay: rec.delay,
            concurrency: ev.concurrency,
            eta: rec.eta,
            alpha: rec.alpha,
            direction_norm: rec.direction_norm,
            step_norm: rec.step_norm,
            cancellation_residual: ev.cancellation_residual,
            skipped: rec.skipped,
            samples: self.samples,
            expected_return: ret,
            grad_norm,
            error_norm: err_norm,
        });
        if let (Some(trace), Some((theta, theta_prev))) = (self.trace.as_mut(), before) {
            trace.push(TraceRow {
                k: rec.k,
                origin_iter,
                alpha: rec.alpha,
                theta,
                theta_prev,
                theta_tilde: ev.theta_tilde.to_vec(),
                gradient: ev.gradient.to_vec(),
                direction: rec.direction.clone(),
            });
        }
        Ok(rec)
    }

    pub fn finish(self, cfg: &RunConfig, server: &ServerState, ledger: Option<DelayLedger>) -> Result<TrainingLog> {
        let (final_return, optimal_return) = if self.exact {
            let j = self.mdp.expected_return(&self.policy(server.theta())?)?;
            (Some(j), Some(self.mdp.optimal_return()?))
        } else {
            (None, None)
        };
        Ok(TrainingLog {
            mode: cfg.mode,
            variant: cfg.variant,
            seed: cfg.seed,
            num_agents: cfg.num_agents,
            rows: self.rows,
            final_theta: server.theta().to_vec(),
            initial_return: self.initial_return,
            final_return,
            optimal_return,
            zero_direction_events: self.zero_events,
            ledger,
            trace: self.trace,
        })
    }
}
