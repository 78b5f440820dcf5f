use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use super::{ApplyEvent, DelayLedger, Mode, Recorder, RunConfig, TrainingLog};
use crate::afedpg::{agent_step, AgentTask, ServerState};
use crate::env::TabularMDP;
use crate::error::{config, Result};
use crate::linalg;
use crate::rng::{labels, named_stream};

/// Dispatches on `cfg.mode`. Parallel runs live in the `afedpg` crate.
pub fn run(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog> {
    match cfg.mode {
        Mode::Async => run_async(mdp, cfg),
        Mode::Sync => run_sync(mdp, cfg),
        Mode::Single => run_single(mdp, cfg),
        Mode::Parallel => Err(config("parallel mode needs the threaded runner")),
    }
}

pub(crate) fn initial_server(mdp: &TabularMDP, cfg: &RunConfig) -> Result<ServerState> {
    let dim = mdp.num_states() * mdp.num_actions();
    let theta0 = match &cfg.theta0 {
        Some(t) if t.len() != dim => {
            return Err(config(alloc::format!("theta0 has {} entries, expected {dim}", t.len())));
        }
        Some(t) => t.clone(),
        None => vec![0.0; dim],
    };
    ServerState::new(theta0, cfg.schedules, cfg.variant)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Completion {
    time: f64,
    agent: usize,
}

impl Eq for Completion {}

impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.agent.cmp(&other.agent))
    }
}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Event-driven asynchronous training.
///
/// All agents start from `θ₀` at time 0. The earliest completion (lowest
/// agent id on ties) is applied, and that agent immediately restarts from
/// the new model, whose index becomes its start iteration.
pub fn run_async(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let n = cfg.num_agents;
    let k_total = cfg.iterations;
    let mut server = initial_server(mdp, cfg)?;
    let mut rec = Recorder::new(mdp, cfg);
    let mut ledger = DelayLedger::new(n);
    let msg = server.message();
    let mut tasks: Vec<AgentTask> =
        (0..n).map(|i| AgentTask { agent_id: i, task_index: 0, message: msg.clone() }).collect();
    let mut heap: BinaryHeap<Reverse<Completion>> =
        (0..n).map(|i| Reverse(Completion { time: cfg.compute.draw(cfg.seed, i, 0), agent: i })).collect();
    let in_flight_before = |tasks: &[AgentTask], k: u64| tasks.iter().filter(|t| t.start_iter() < k).count() as u64;

    for k in 0..k_total {
        let Reverse(ev) = heap.pop().expect("every agent is always in flight");
        debug_assert_eq!(heap.len() + 1, n);
        let omega = in_flight_before(&tasks, k);
        let task = &tasks[ev.agent];
        let mut rng = named_stream(cfg.seed, labels::TRAJECTORY, ev.agent as u64, task.task_index);
        let out = agent_step(task, mdp, cfg.horizon, cfg.discount, cfg.variant, &mut rng)?;
        let applied = rec.apply(
            &mut server,
            &out.payload,
            out.origin_iter,
            ApplyEvent {
                sim_time: ev.time,
                agent_id: Some(ev.agent),
                concurrency: omega,
                samples: 1,
                cancellation_residual: out.cancellation_residual,
                theta_tilde: &out.theta_tilde,
                gradient: &out.gradient,
            },
        )?;
        ledger.applied_delays.push(applied.delay);
        ledger.concurrency.push(omega);
        let next_index = tasks[ev.agent].task_index + 1;
        tasks[ev.agent] = AgentTask { agent_id: ev.agent, task_index: next_index, message: server.message() };
        let dt = cfg.compute.draw(cfg.seed, ev.agent, next_index);
        heap.push(Reverse(Completion { time: ev.time + dt, agent: ev.agent }));
    }
    ledger.concurrency.push(in_flight_before(&tasks, k_total));
    ledger.unapplied_delays = tasks.iter().map(|t| k_total - t.start_iter()).collect();
    rec.finish(cfg, &server, Some(ledger))
}

/// Synchronous rounds: every agent samples at the current model, payloads
/// are averaged and one apply is made with zero delay. A round lasts as
/// long as its slowest agent.
pub fn run_sync(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let log = sync_loop(mdp, cfg)?;
    Ok(TrainingLog { ledger: None, ..log })
}

/// Serial training with one agent; same schedules and estimator.
pub fn run_single(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog> {
    if cfg.num_agents != 1 {
        return Err(config("single-agent runs need num_agents = 1"));
    }
    cfg.validate()?;
    sync_loop(mdp, cfg)
}

fn sync_loop(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog> {
    let n = cfg.num_agents;
    let mut server = initial_server(mdp, cfg)?;
    let mut rec = Recorder::new(mdp, cfg);
    let mut ledger = DelayLedger::new(n);
    let dim = server.theta().len();
    let mut time = 0.0;
    let mut sum_payload = vec![0.0; dim];
    let mut sum_grad = vec![0.0; dim];
    for r in 0..cfg.iterations {
        let msg = server.message();
        sum_payload.iter_mut().for_each(|x| *x = 0.0);
        sum_grad.iter_mut().for_each(|x| *x = 0.0);
        let mut round = 0.0f64;
        let mut residual = 0.0f64;
        let mut theta_tilde = Vec::new();
        for i in 0..n {
            let task = AgentTask { agent_id: i, task_index: r, message: msg.clone() };
            let mut rng = named_stream(cfg.seed, labels::TRAJECTORY, i as u64, r);
            let out = agent_step(&task, mdp, cfg.horizon, cfg.discount, cfg.variant, &mut rng)?;
            linalg::axpy(&mut sum_payload, 1.0, &out.payload);
            linalg::axpy(&mut sum_grad, 1.0, &out.gradient);
            residual = residual.max(out.cancellation_residual);
            round = round.max(cfg.compute.draw(cfg.seed, i, r));
            theta_tilde = out.theta_tilde;
        }
        let inv = 1.0 / n as f64;
        let payload: Vec<f64> = sum_payload.iter().map(|x| x * inv).collect();
        let grad: Vec<f64> = sum_grad.iter().map(|x| x * inv).collect();
        time += round;
        let applied = rec.apply(
            &mut server,
            &payload,
            msg.k,
            ApplyEvent {
                sim_time: time,
                agent_id: (n == 1).then_some(0),
                concurrency: 0,
                samples: n as u64,
                cancellation_residual: residual,
                theta_tilde: &theta_tilde,
                gradient: &grad,
            },
        )?;
        ledger.applied_delays.push(applied.delay);
        ledger.concurrency.push(0);
    }
    ledger.concurrency.push(0);
    ledger.unapplied_delays = vec![0; n];
    rec.finish(cfg, &server, Some(ledger))
}
