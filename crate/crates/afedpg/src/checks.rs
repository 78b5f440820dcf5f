//! Check suites behind `afedpg check` and the per-run checks of `run`.

use afedpg_core::afedpg::{cancellation_residual, Schedules, Variant};
use afedpg_core::analysis::{
    ab_bounds_check, ascent_residual_check, convergence_report, error_recursion_check, error_recursion_check_with,
    fisher_estimate, gradient_domination_report, lr_bound_check, lr_seq_bound_check, objective_trace,
    GradDominationParams, LemmaReport, MdpObjective, QuadraticObjective, RemainderForm, Strictness,
};
use afedpg_core::env::{truncation_horizon, TabularMDP};
use afedpg_core::gradient::{estimate_sigma_g, truncation_bias_bound, DiscountMode};
use afedpg_core::policy::{score_bounds, smoothness_constants, SoftmaxPolicy};
use afedpg_core::rng::named_stream;
use afedpg_core::sim::{
    delay_accounting_check, run, run_async, run_sync, speedup_experiment, ComputeModel, DelayLedger, Mode, RunConfig,
    TrainingLog,
};
use serde::Serialize;

use crate::config::{self, ExperimentConfig, BUNDLED};
use crate::parallel::run_parallel;

/// Tolerance for exact floating-point identities.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scope {
    /// Suites that must pass.
    Strict,
    /// Strict suites plus report-only ones.
    All,
    /// Perturbed checks that must fail.
    NegativeControls,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub expect_failure: bool,
    pub reports: Vec<LemmaReport>,
    /// Set when the suite could not run.
    pub error: Option<String>,
}

impl SuiteResult {
    fn from_result(suite: &str, expect_failure: bool, r: afedpg_core::Result<Vec<LemmaReport>>) -> Self {
        match r {
            Ok(reports) => Self { suite: suite.to_string(), expect_failure, reports, error: None },
            Err(e) => Self { suite: suite.to_string(), expect_failure, reports: Vec::new(), error: Some(e.to_string()) },
        }
    }

    pub fn has_failure(&self) -> bool {
        self.error.is_some() || self.reports.iter().any(LemmaReport::is_failure)
    }

    /// Strict suites pass when nothing enforced fails; controls pass when
    /// something enforced does.
    pub fn ok(&self) -> bool {
        if self.expect_failure {
            self.error.is_none() && self.reports.iter().any(LemmaReport::is_failure)
        } else {
            !self.has_failure()
        }
    }
}

/// Report with a single pass/fail sample for checks that are not numeric.
pub fn verdict(id: &str, result: Result<(), String>) -> LemmaReport {
    let mut rep = LemmaReport::new(id, Strictness::ExactIdentity, 0.0);
    match result {
        Ok(()) => rep.push(0, 0.0, 0.0, 0.0),
        Err(msg) => {
            rep.push(0, 0.0, 0.0, f64::INFINITY);
            rep.note(msg);
        }
    }
    rep
}

/// Cancellation residuals, step lengths and, when present, the delay ledger.
pub fn invariant_reports(log: &TrainingLog) -> Vec<LemmaReport> {
    let mut canc = LemmaReport::new("cancellation", Strictness::ExactIdentity, EXACT_TOL);
    let mut step = LemmaReport::new("normalized-step", Strictness::ExactIdentity, EXACT_TOL);
    for r in &log.rows {
        canc.push(r.k, r.cancellation_residual, 0.0, r.cancellation_residual);
        if !r.skipped {
            step.push(r.k, r.step_norm, r.eta, (r.step_norm - r.eta).abs());
        }
    }
    let mut out = vec![canc, step];
    if let Some(ledger) = &log.ledger {
        out.push(ledger_report(ledger, log.iterations(), log.num_agents));
    }
    out
}

pub fn ledger_report(ledger: &DelayLedger, iterations: u64, num_agents: usize) -> LemmaReport {
    let res = delay_accounting_check(ledger, iterations, num_agents);
    let mut rep = verdict("delay-accounting", res.as_ref().map(|_| ()).map_err(|e| e.to_string()));
    if let Ok(acc) = res {
        rep.note(format!("mean delay {:.6}, mean concurrency {:.6}", acc.mean_delay, acc.mean_concurrency));
    }
    rep
}

/// Ascent residuals with the analytic `L_g` scaled by `lg_scale`.
pub fn ascent_report(mdp: &TabularMDP, log: &TrainingLog, lg_scale: f64) -> afedpg_core::Result<LemmaReport> {
    let b = score_bounds(mdp.num_actions());
    let mut c = smoothness_constants(b.m_g, b.m_h, mdp.r_max(), mdp.gamma());
    c.l_g *= lg_scale;
    let mut rep = ascent_residual_check(log, &c)?;
    rep.note(format!("L_g = {:.6}", c.l_g));
    Ok(rep)
}

/// The checks `run` performs on a finished run, as toggled in the config.
pub fn run_checks(cfg: &ExperimentConfig, mdp: &TabularMDP, log: &TrainingLog) -> afedpg_core::Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    if cfg.checks.invariants {
        out.extend(invariant_reports(log));
    }
    if cfg.checks.ascent {
        out.push(ascent_report(mdp, log, 1.0)?);
    }
    Ok(out)
}

fn chain() -> TabularMDP {
    TabularMDP::chain(5, 0.1, 0.9).expect("valid chain")
}

fn chain_horizon() -> usize {
    truncation_horizon(0.9, config::HORIZON_TOLERANCE)
}

fn prefixed(name: &str, mut reports: Vec<LemmaReport>) -> Vec<LemmaReport> {
    for r in &mut reports {
        r.id = format!("{name}/{}", r.id);
    }
    reports
}

fn bundled_runs() -> afedpg_core::Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    for (name, _) in BUNDLED {
        let cfg = config::bundled(name).expect("bundled");
        let mdp = cfg.env.build()?;
        let log = run(&mdp, &cfg.run_config())?;
        let mut reps = invariant_reports(&log);
        if cfg.checks.ascent {
            reps.push(ascent_report(&mdp, &log, 1.0)?);
        }
        out.extend(prefixed(name, reps));
    }
    Ok(out)
}

fn parallel_runs() -> afedpg_core::Result<Vec<LemmaReport>> {
    let mut cfg = RunConfig::new(Mode::Parallel, 4, 1000, chain_horizon(), 0);
    cfg.exact_metrics = false;
    let log = run_parallel(&chain(), &cfg).map_err(|e| afedpg_core::Error::Check(e.message))?;
    Ok(prefixed("parallel", invariant_reports(&log)))
}

fn ledger_sweep() -> afedpg_core::Result<Vec<LemmaReport>> {
    let mdp = chain();
    let mut out = Vec::new();
    for n in [2usize, 4, 8] {
        let mut cfg = RunConfig::new(Mode::Async, n, 1000, chain_horizon(), n as u64);
        cfg.exact_metrics = false;
        cfg.compute = ComputeModel::LogNormal {
            medians: (0..n).map(|i| 1.0 + 0.5 * i as f64).collect(),
            sigma: 0.5,
            shift: 0.2,
        };
        let log = run_async(&mdp, &cfg)?;
        let mut rep = ledger_report(log.ledger.as_ref().expect("async ledger"), 1000, n);
        rep.id = format!("delay-accounting(N={n})");
        out.push(rep);
    }
    Ok(out)
}

const TIMING_TIMES: [f64; 4] = [1.0, 1.3, 1.7, 2.9];

fn timing() -> afedpg_core::Result<Vec<LemmaReport>> {
    let mdp = TabularMDP::bandit(&[1.0, 0.0])?;
    let compute = ComputeModel::Deterministic { times: TIMING_TIMES.to_vec() };
    let mut cfg = RunConfig::new(Mode::Sync, 4, 50, 1, 0);
    cfg.compute = compute.clone();
    cfg.exact_metrics = false;
    let syn = run_sync(&mdp, &cfg)?;
    let mut round = LemmaReport::new("sync-round-time", Strictness::ExactIdentity, 0.0);
    let mut prev = 0.0;
    for r in &syn.rows {
        // each round advances the clock by exactly t_max
        round.push(r.k, r.sim_time, prev + compute.t_max(), (r.sim_time - (prev + compute.t_max())).abs());
        prev = r.sim_time;
    }
    cfg.mode = Mode::Async;
    cfg.iterations = 10_000;
    let asy = run_async(&mdp, &cfg)?;
    let mean = asy.total_sim_time() / asy.iterations() as f64;
    let t_bar = compute.harmonic();
    let mut inter = LemmaReport::new("async-inter-apply-time", Strictness::StrictInequality, 0.0);
    inter.push_le(asy.iterations(), (mean - t_bar).abs() / t_bar, 0.01);
    inter.note(format!("mean {mean:.6}, harmonic {t_bar:.6}"));
    Ok(vec![round, inter])
}

/// `((N−1)r+1)/N` against measured speedups and the slope in `r`.
pub fn speedup_reports(samples: u64) -> afedpg_core::Result<Vec<LemmaReport>> {
    let mdp = TabularMDP::bandit(&[1.0, 0.0])?;
    let base = RunConfig::new(Mode::Async, 1, 1, 1, 0);
    let mut out = Vec::new();
    for n in [4usize, 8] {
        let mut rel = LemmaReport::new(format!("speedup(N={n})"), Strictness::StrictInequality, 0.0);
        let mut pts = Vec::new();
        for r in [1.0, 2.0, 4.0, 8.0] {
            let s = speedup_experiment(&mdp, &base, n, r, samples)?;
            rel.push_le(r as u64, (s.measured / s.predicted - 1.0).abs(), 0.02);
            pts.push((r, s.measured));
        }
        let mut mono = LemmaReport::new(format!("speedup-increasing(N={n})"), Strictness::StrictInequality, 0.0);
        for w in pts.windows(2) {
            mono.push_le(w[1].0 as u64, w[0].1, w[1].1);
        }
        let slope = fit_slope(&pts);
        let want = (n as f64 - 1.0) / n as f64;
        let mut sl = LemmaReport::new(format!("speedup-slope(N={n})"), Strictness::StrictInequality, 0.0);
        sl.push_le(0, (slope - want).abs() / want, 0.05);
        sl.note(format!("slope {slope:.6}, expected {want:.6}"));
        out.extend([rel, mono, sl]);
    }
    Ok(out)
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `‖mean of n estimates − ∇J‖ ≤ 3σ̂/√n + truncation bound` at the uniform
/// policy of the bandit and the chain.
pub fn unbiasedness_reports(n: usize) -> afedpg_core::Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    for (name, mdp) in [("bandit", TabularMDP::bandit(&[1.0, 0.0])?), ("chain", chain())] {
        let horizon = truncation_horizon(mdp.gamma(), config::HORIZON_TOLERANCE);
        let policy = SoftmaxPolicy::uniform(mdp.num_states(), mdp.num_actions())?;
        let mut rng = named_stream(0, "unbiasedness", 0, 0);
        let est = estimate_sigma_g(&mdp, &policy, horizon, n, DiscountMode::Absolute, &mut rng)?;
        let m_g = score_bounds(mdp.num_actions()).m_g;
        let budget = truncation_bias_bound(mdp.gamma(), horizon, mdp.r_max(), m_g);
        let mut rep = LemmaReport::new(format!("unbiasedness({name})"), Strictness::StrictInequality, 0.0);
        rep.push_le(n as u64, est.bias_norm(), 3.0 * est.sigma_g_hat / (n as f64).sqrt() + budget);
        rep.note(format!("sigma_g_hat {:.6}, truncation budget {budget:e}", est.sigma_g_hat));
        out.push(rep);
    }
    Ok(out)
}

fn step_size_bounds() -> Vec<LemmaReport> {
    let mut out = Vec::new();
    for p in [0.5, 0.8, 1.0] {
        for c in [1.0, 2.0] {
            out.extend(lr_bound_check(p, c, 100_000));
        }
    }
    out
}

fn step_sum_bounds(q_values: &[f64], class: Strictness) -> Vec<LemmaReport> {
    q_values.iter().map(|&q| lr_seq_bound_check(0.8, q, 1.0, 10_000, class)).collect()
}

fn quadratic() -> QuadraticObjective {
    QuadraticObjective::new(vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0], vec![1.0, -1.0, 0.5])
        .expect("symmetric matrix")
}

fn chain_trace_run() -> afedpg_core::Result<TrainingLog> {
    let mut cfg = RunConfig::new(Mode::Async, 4, 200, chain_horizon(), 0);
    cfg.record_trace = true;
    run_async(&chain(), &cfg)
}

/// 50 evenly spaced indices below `len`.
pub fn sampled_indices(len: usize) -> Vec<usize> {
    (0..50).map(|i| i * len / 50).collect()
}

fn error_recursion(form: RemainderForm) -> afedpg_core::Result<Vec<LemmaReport>> {
    let q = quadratic();
    let trace = objective_trace(&q, vec![0.0; 3], Schedules::default(), 3, 200, 0.3, 1)?;
    let idx: Vec<usize> = (0..trace.len()).collect();
    let mut quad = error_recursion_check_with(&q, &trace, Variant::ServerAnchor, &idx, EXACT_TOL, form)?;
    quad.id = "error-recursion(quadratic)".into();
    let mdp = chain();
    let log = chain_trace_run()?;
    let trace = log.trace.as_ref().expect("trace recorded");
    let obj = MdpObjective { mdp: &mdp };
    let mut ch = error_recursion_check_with(&obj, trace, Variant::ServerAnchor, &sampled_indices(trace.len()), 1e-6, form)?;
    ch.id = "error-recursion(chain)".into();
    Ok(vec![quad, ch])
}

fn report_only() -> afedpg_core::Result<Vec<LemmaReport>> {
    let mut out = step_sum_bounds(&[0.0], Strictness::ReportOnly);
    let mdp = chain();
    let log = chain_trace_run()?;
    let trace = log.trace.as_ref().expect("trace recorded");
    let b = score_bounds(mdp.num_actions());
    let c = smoothness_constants(b.m_g, b.m_h, mdp.r_max(), mdp.gamma());
    let idx: Vec<usize> = (1..trace.len()).collect();
    out.extend(ab_bounds_check(&MdpObjective { mdp: &mdp }, trace, &Schedules::default(), c.l_g, c.l_h, &idx)?);

    let conv = convergence_report(&log, None)?;
    let mut slope = LemmaReport::new("tail-slope", Strictness::ReportOnly, 0.0);
    if let Some(s) = conv.tail_slope {
        slope.push_le(log.iterations(), s, conv.reference_slope);
    }
    slope.note(format!("initial gap {:.6}, final gap {:.6}", conv.initial_gap, conv.final_gap));
    out.push(slope);

    let fisher = fisher_estimate(&mdp, &SoftmaxPolicy::uniform(5, 2)?)?;
    let mut f = LemmaReport::new("fisher-spectrum", Strictness::ReportOnly, 0.0);
    f.push(0, fisher.smallest_nonzero.unwrap_or(0.0), 0.0, -fisher.max_asymmetry);
    f.note(format!("rank {} of {}, eigenvalues {:?}", fisher.rank, fisher.dim, fisher.eigenvalues));
    out.push(f);

    let mu_f = fisher.smallest_nonzero.unwrap_or(0.0);
    let params = GradDominationParams::new(mu_f, 0.0, b.m_g, mdp.gamma())?;
    let thetas: Vec<Vec<f64>> = trace.iter().step_by(10).map(|r| r.theta.clone()).collect();
    out.push(gradient_domination_report(&mdp, &thetas, &params)?);
    Ok(out)
}

fn controls() -> Vec<SuiteResult> {
    let mut out = Vec::new();
    let base = chain_trace_run();
    let mdp = chain();

    out.push(SuiteResult::from_result(
        "ascent with L_g/100",
        true,
        base.as_ref().map_err(Clone::clone).and_then(|log| Ok(vec![ascent_report(&mdp, log, 0.01)?])),
    ));

    out.push(SuiteResult::from_result(
        "cancellation without lookahead",
        true,
        base.as_ref().map_err(Clone::clone).map(|log| {
            let mut rep = LemmaReport::new("cancellation(no lookahead)", Strictness::ExactIdentity, EXACT_TOL);
            for t in log.trace.as_ref().expect("trace recorded") {
                let r = cancellation_residual(&t.theta, &t.theta_prev, &t.theta, t.alpha);
                rep.push(t.k, r, 0.0, r);
            }
            vec![rep]
        }),
    ));

    out.push(SuiteResult::from_result(
        "unnormalized step",
        true,
        base.as_ref().map_err(Clone::clone).map(|log| {
            let mut rep = LemmaReport::new("normalized-step(raw direction)", Strictness::ExactIdentity, EXACT_TOL);
            for r in log.rows.iter().filter(|r| !r.skipped) {
                let raw = r.eta * r.direction_norm;
                rep.push(r.k, raw, r.eta, (raw - r.eta).abs());
            }
            vec![rep]
        }),
    ));

    out.push(SuiteResult::from_result(
        "corrupted ledger",
        true,
        base.as_ref().map_err(Clone::clone).map(|log| {
            let mut ledger = log.ledger.clone().expect("async ledger");
            ledger.applied_delays[log.rows.len() / 2] += 1;
            vec![ledger_report(&ledger, log.iterations(), log.num_agents)]
        }),
    ));

    out.push(SuiteResult::from_result("error recursion with printed remainders", true, error_recursion(RemainderForm::AsPrinted)));

    out.push(SuiteResult::from_result(
        "async inter-apply time = t_max/N",
        true,
        (|| {
            let mdp = TabularMDP::bandit(&[1.0, 0.0])?;
            let compute = ComputeModel::Deterministic { times: TIMING_TIMES.to_vec() };
            let mut cfg = RunConfig::new(Mode::Async, 4, 10_000, 1, 0);
            cfg.compute = compute.clone();
            cfg.exact_metrics = false;
            let asy = run_async(&mdp, &cfg)?;
            let mean = asy.total_sim_time() / asy.iterations() as f64;
            let wrong = compute.t_max() / 4.0;
            let mut rep = LemmaReport::new("inter-apply(t_max/N)", Strictness::StrictInequality, 0.0);
            rep.push_le(asy.iterations(), (mean - wrong).abs() / wrong, 0.01);
            Ok(vec![rep])
        })(),
    ));

    out.push(SuiteResult {
        suite: "degenerate learning-rate constant".into(),
        expect_failure: true,
        reports: step_sum_bounds(&[0.0], Strictness::StrictInequality),
        error: None,
    });
    out
}

/// Runs every suite in `scope`.
pub fn run_suites(scope: Scope) -> Vec<SuiteResult> {
    if scope == Scope::NegativeControls {
        return controls();
    }
    let mut out = vec![
        SuiteResult::from_result("bundled runs", false, bundled_runs()),
        SuiteResult::from_result("parallel runner", false, parallel_runs()),
        SuiteResult::from_result("delay accounting", false, ledger_sweep()),
        SuiteResult::from_result("timing model", false, timing()),
        SuiteResult::from_result("straggler speedup", false, speedup_reports(4000)),
        SuiteResult::from_result("estimator unbiasedness", false, unbiasedness_reports(10_000)),
        SuiteResult::from_result("learning-rate bounds", false, Ok(step_size_bounds())),
        SuiteResult::from_result(
            "learning-rate sums",
            false,
            Ok(step_sum_bounds(&[1.6, 1.2], Strictness::StrictInequality)),
        ),
        SuiteResult::from_result("error recursion", false, error_recursion(RemainderForm::Corrected)),
    ];
    if scope == Scope::All {
        out.push(SuiteResult::from_result("report-only", false, report_only()));
    }
    out
}

/// Error-recursion reports on a finished run; used by tests.
pub fn recursion_on_log(mdp: &TabularMDP, log: &TrainingLog, tolerance: f64) -> afedpg_core::Result<LemmaReport> {
    let trace = log.trace.as_ref().ok_or_else(|| afedpg_core::Error::Input("run has no trace".into()))?;
    error_recursion_check(&MdpObjective { mdp }, trace, log.variant, &sampled_indices(trace.len()), tolerance)
}
