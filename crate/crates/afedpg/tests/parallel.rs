use std::time::Duration;

use afedpg::checks::invariant_reports;
use afedpg::parallel::{run_parallel, run_parallel_with, ParallelOptions};
use afedpg_core::env::TabularMDP;
use afedpg_core::sim::{delay_accounting_check, run_single, ComputeModel, Mode, RunConfig};

fn chain() -> TabularMDP {
    TabularMDP::chain(5, 0.1, 0.9).unwrap()
}

#[test]
fn one_worker_reproduces_the_single_agent_run() {
    let mdp = chain();
    let cfg = RunConfig::new(Mode::Single, 1, 120, 40, 21);
    let single = run_single(&mdp, &cfg).unwrap();
    let par = run_parallel(&mdp, &cfg).unwrap();
    assert_eq!(par.final_theta, single.final_theta);
    for (a, b) in par.rows.iter().zip(&single.rows) {
        assert_eq!((a.k, a.delay, a.eta, a.alpha, a.direction_norm), (b.k, b.delay, b.eta, b.alpha, b.direction_norm));
        assert_eq!(a.expected_return, b.expected_return);
    }
}

#[test]
fn four_workers_keep_every_invariant() {
    let mut cfg = RunConfig::new(Mode::Parallel, 4, 1000, 40, 2);
    cfg.exact_metrics = false;
    let log = run_parallel(&chain(), &cfg).unwrap();
    assert_eq!(log.mode, Mode::Parallel);
    assert_eq!(log.rows.len(), 1000);
    for rep in invariant_reports(&log) {
        assert!(rep.passed, "{}: {:?}", rep.id, rep.worst);
    }
    delay_accounting_check(log.ledger.as_ref().unwrap(), 1000, 4).unwrap();
    assert!(log.rows.windows(2).all(|w| w[0].sim_time <= w[1].sim_time));
}

#[test]
fn emulated_speeds_shift_the_apply_shares() {
    let mut cfg = RunConfig::new(Mode::Parallel, 2, 60, 5, 0);
    cfg.exact_metrics = false;
    cfg.compute = ComputeModel::Deterministic { times: vec![1.0, 4.0] };
    let opts = ParallelOptions { time_unit: Duration::from_millis(2), inject_panic: None };
    let log = run_parallel_with(&chain(), &cfg, &opts).unwrap();
    let fast = log.rows.iter().filter(|r| r.agent_id == Some(0)).count();
    assert!(fast > 36, "fast agent made {fast} of 60 applies");
}

#[test]
fn worker_panic_aborts_with_partial_log() {
    let cfg = RunConfig::new(Mode::Parallel, 1, 50, 10, 0);
    let opts = ParallelOptions { time_unit: Duration::ZERO, inject_panic: Some((0, 7)) };
    let err = run_parallel_with(&chain(), &cfg, &opts).unwrap_err();
    assert!(err.message.contains("injected failure"), "{}", err.message);
    let partial = err.partial.expect("partial log");
    assert_eq!(partial.rows.len(), 7);
    assert!(partial.ledger.is_none());
}
