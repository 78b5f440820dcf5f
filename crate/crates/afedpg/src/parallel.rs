//! Training with one OS thread per agent.
//!
//! The server loop owns the [`ServerState`] and applies payloads one at a
//! time in arrival order. Workers receive immutable model snapshots over a
//! channel and send their outputs back; they share nothing else. Sampling
//! uses the same named streams as the simulated runners, so only the
//! interleaving is nondeterministic.

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use afedpg_core::afedpg::{agent_step, AgentOutput, AgentTask, ServerState};
use afedpg_core::env::TabularMDP;
use afedpg_core::rng::{labels, named_stream};
use afedpg_core::sim::{ApplyEvent, DelayLedger, Mode, Recorder, RunConfig, TrainingLog};

#[derive(Debug, Clone, Default)]
pub struct ParallelOptions {
    /// Workers sleep `draw · time_unit` after each step to emulate the
    /// configured compute law; zero leaves only real jitter.
    pub time_unit: Duration,
    /// Panic in this `(agent, task_index)`; for exercising the abort path.
    pub inject_panic: Option<(usize, u64)>,
}

/// A run that stopped early. `partial` holds every apply made so far.
#[derive(Debug)]
pub struct ParallelError {
    pub message: String,
    pub partial: Option<TrainingLog>,
}

impl std::fmt::Display for ParallelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ParallelError {}

impl From<afedpg_core::Error> for ParallelError {
    fn from(e: afedpg_core::Error) -> Self {
        Self { message: e.to_string(), partial: None }
    }
}

enum WorkerMsg {
    Done { task_index: u64, out: Box<AgentOutput> },
    Failed { agent: usize, message: String },
}

pub fn run_parallel(mdp: &TabularMDP, cfg: &RunConfig) -> Result<TrainingLog, ParallelError> {
    run_parallel_with(mdp, cfg, &ParallelOptions::default())
}

pub fn run_parallel_with(mdp: &TabularMDP, cfg: &RunConfig, opts: &ParallelOptions) -> Result<TrainingLog, ParallelError> {
    let cfg = RunConfig { mode: Mode::Parallel, ..cfg.clone() };
    cfg.validate()?;
    let n = cfg.num_agents;
    let k_total = cfg.iterations;
    let dim = mdp.num_states() * mdp.num_actions();
    let theta0 = cfg.theta0.clone().unwrap_or_else(|| vec![0.0; dim]);
    if theta0.len() != dim {
        return Err(afedpg_core::Error::Config(format!("theta0 has {} entries, expected {dim}", theta0.len())).into());
    }
    let mut server = ServerState::new(theta0, cfg.schedules, cfg.variant)?;
    let mut rec = Recorder::new(mdp, &cfg);
    let mut ledger = DelayLedger::new(n);

    let (result_tx, result_rx) = mpsc::channel::<WorkerMsg>();
    let mut task_txs = Vec::with_capacity(n);
    let mut task_rxs = Vec::with_capacity(n);
    for _ in 0..n {
        let (tx, rx) = mpsc::channel::<AgentTask>();
        task_txs.push(tx);
        task_rxs.push(rx);
    }

    thread::scope(|scope| {
        for (agent, rx) in task_rxs.into_iter().enumerate() {
            let tx = result_tx.clone();
            let cfg = &cfg;
            scope.spawn(move || {
                while let Ok(task) = rx.recv() {
                    let task_index = task.task_index;
                    let step = panic::catch_unwind(AssertUnwindSafe(|| {
                        if opts.inject_panic == Some((agent, task_index)) {
                            panic!("injected failure in agent {agent}, task {task_index}");
                        }
                        let mut rng = named_stream(cfg.seed, labels::TRAJECTORY, agent as u64, task_index);
                        agent_step(&task, mdp, cfg.horizon, cfg.discount, cfg.variant, &mut rng)
                    }));
                    let msg = match step {
                        Ok(Ok(out)) => {
                            if !opts.time_unit.is_zero() {
                                thread::sleep(opts.time_unit.mul_f64(cfg.compute.draw(cfg.seed, agent, task_index)));
                            }
                            WorkerMsg::Done { task_index, out: Box::new(out) }
                        }
                        Ok(Err(e)) => WorkerMsg::Failed { agent, message: e.to_string() },
                        Err(p) => WorkerMsg::Failed { agent, message: panic_message(p.as_ref()) },
                    };
                    let failed = matches!(msg, WorkerMsg::Failed { .. });
                    if tx.send(msg).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(result_tx);

        let msg = server.message();
        let mut starts = vec![0u64; n];
        for (agent, tx) in task_txs.iter().enumerate() {
            // a worker can only be gone if it already reported a failure
            let _ = tx.send(AgentTask { agent_id: agent, task_index: 0, message: msg.clone() });
        }
        let mut next_index = vec![1u64; n];
        let clock = Instant::now();
        let mut failure = None;
        for k in 0..k_total {
            let (task_index, out) = match result_rx.recv() {
                Ok(WorkerMsg::Done { task_index, out }) => (task_index, out),
                Ok(WorkerMsg::Failed { agent, message }) => {
                    failure = Some(format!("agent {agent} failed at apply {k}: {message}"));
                    break;
                }
                Err(_) => {
                    failure = Some(format!("all workers exited before apply {k}"));
                    break;
                }
            };
            let agent = out.agent_id;
            debug_assert_eq!(task_index + 1, next_index[agent]);
            let omega = starts.iter().filter(|&&s| s < k).count() as u64;
            let applied = rec.apply(
                &mut server,
                &out.payload,
                out.origin_iter,
                ApplyEvent {
                    sim_time: clock.elapsed().as_secs_f64(),
                    agent_id: Some(agent),
                    concurrency: omega,
                    samples: 1,
                    cancellation_residual: out.cancellation_residual,
                    theta_tilde: &out.theta_tilde,
                    gradient: &out.gradient,
                },
            );
            let applied = match applied {
                Ok(a) => a,
                Err(e) => {
                    failure = Some(format!("apply {k} failed: {e}"));
                    break;
                }
            };
            ledger.applied_delays.push(applied.delay);
            ledger.concurrency.push(omega);
            starts[agent] = server.k();
            let task = AgentTask { agent_id: agent, task_index: next_index[agent], message: server.message() };
            next_index[agent] += 1;
            let _ = task_txs[agent].send(task);
        }
        // closing the task channels lets every worker exit
        drop(task_txs);
        let done = ledger.applied_delays.len() as u64;
        if failure.is_none() {
            ledger.concurrency.push(starts.iter().filter(|&&s| s < done).count() as u64);
            ledger.unapplied_delays = starts.iter().map(|&s| done - s).collect();
        }
        let log = rec.finish(&cfg, &server, failure.is_none().then_some(ledger));
        match (failure, log) {
            (None, Ok(log)) => Ok(log),
            (None, Err(e)) => Err(e.into()),
            (Some(message), log) => Err(ParallelError { message, partial: log.ok() }),
        }
    })
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}
