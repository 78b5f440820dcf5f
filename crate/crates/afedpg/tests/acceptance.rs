//! Acceptance suite: one line per criterion, nonzero exit on any failure
//! not listed in `KNOWN_FAILURES`.

use std::time::Instant;

use afedpg::config::{bundled, ExperimentConfig, BUNDLED};
use afedpg::output::write_log;
use afedpg_core::afedpg::{Schedules, ServerState, Variant};
use afedpg_core::analysis::{
    error_recursion_check, step_sum_constant, lr_bound_check, lr_seq_bound_check, objective_trace, MdpObjective,
    QuadraticObjective, Strictness,
};
use afedpg_core::env::{truncation_horizon, TabularMDP};
use afedpg_core::gradient::{estimate_sigma_g, truncation_bias_bound, DiscountMode};
use afedpg_core::linalg;
use afedpg_core::policy::{score_bounds, smoothness_constants, SoftmaxPolicy};
use afedpg_core::rng::named_stream;
use afedpg_core::sim::{
    delay_accounting_check, run, run_async, run_sync, samples_to_threshold, speedup_experiment, ComputeModel, Mode,
    RunConfig, ThresholdRule, TrainingLog,
};
use rand::Rng;

/// Criteria that fail for documented reasons; they are still evaluated and
/// reported.
const KNOWN_FAILURES: &[u32] = &[7, 11];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn chain() -> TabularMDP {
    TabularMDP::chain(5, 0.1, 0.9).unwrap()
}

fn chain_horizon() -> usize {
    truncation_horizon(0.9, 1e-6)
}

fn bundled_logs() -> Vec<(String, TrainingLog)> {
    let mut out = Vec::new();
    for (name, _) in BUNDLED {
        let cfg = bundled(name).unwrap();
        let mdp = cfg.env.build().unwrap();
        for variant in [Variant::ServerAnchor, Variant::AgentAnchor] {
            let mut rc = cfg.run_config();
            rc.variant = variant;
            out.push((format!("{name}/{variant}"), run(&mdp, &rc).unwrap()));
        }
    }
    out
}

fn c01_cancellation() -> Verdict {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, log) in bundled_logs() {
        worst = worst.max(log.max_cancellation_residual());
        count += log.rows.len();
    }
    verdict(worst <= 1e-12, format!("max residual {worst:e} over {count} applies, tolerance 1e-12"))
}

fn c02_normalized_step() -> Verdict {
    let mut rng = named_stream(0, "acceptance-steps", 0, 0);
    let mut worst = 0.0f64;
    let mut applies = 0;
    for trial in 0..1000u64 {
        let dim = rng.random_range(1..12);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eta0 = rng.random_range(0.001..10.0);
        let variant = if trial % 2 == 0 { Variant::ServerAnchor } else { Variant::AgentAnchor };
        let mut server = ServerState::new(theta, Schedules::new(eta0, 0.8, 1.0).unwrap(), variant).unwrap();
        for _ in 0..rng.random_range(0..5) {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            server.apply(&p, server.k()).unwrap();
        }
        let payload: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(4)).collect();
        let before = server.theta().to_vec();
        let k = server.k();
        let rec = server.apply(&payload, k.saturating_sub(rng.random_range(0..3))).unwrap();
        if !rec.skipped {
            let step = linalg::norm(&linalg::sub(server.theta(), &before));
            worst = worst.max((step - rec.eta).abs());
            applies += 1;
        }
    }
    for (_, log) in bundled_logs() {
        worst = worst.max(log.max_step_error());
        applies += log.rows.iter().filter(|r| !r.skipped).count();
    }
    verdict(worst <= 1e-12, format!("max |step - eta| {worst:e} over {applies} applies, tolerance 1e-12"))
}

fn c03_delay_accounting() -> Verdict {
    let k = 1000u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2usize, 4, 8] {
        let mut cfg = RunConfig::new(Mode::Async, n, k, chain_horizon(), 100 + n as u64);
        cfg.exact_metrics = false;
        cfg.compute = ComputeModel::LogNormal { medians: (0..n).map(|i| 1.0 + 0.7 * i as f64).collect(), sigma: 0.6, shift: 0.2 };
        let log = run_async(&chain(), &cfg).unwrap();
        let l = log.ledger.unwrap();
        // recomputed here from the raw ledger, in integers
        let applied: u128 = l.applied_delays.iter().map(|&d| d as u128).sum();
        let unapplied: u128 = l.unapplied_delays.iter().map(|&d| d as u128).sum();
        let omega_sum: u128 = l.concurrency.iter().map(|&w| w as u128).sum();
        let c_k = l.unapplied_delays.len() as u128;
        let denom = k as u128 - 1 + c_k;
        let identity = l.concurrency.len() as u64 == k + 1 && applied + unapplied == omega_sum;
        // δ̄ = total/denom equals ω̄(K+1)/denom with ω̄ = Σω/(K+1); δ̄ ≤ ω̄ ≤ N cross-multiplied
        let delay_le_conc = (applied + unapplied) * (k as u128 + 1) <= omega_sum * denom;
        let conc_le_n = omega_sum <= n as u128 * (k as u128 + 1);
        let lib = delay_accounting_check(&l, k, n).is_ok();
        ok &= identity && delay_le_conc && conc_le_n && lib;
        parts.push(format!(
            "N={n}: sum delays {} = (K+1)*mean conc {}, mean delay {:.4} <= mean conc {:.4}",
            applied + unapplied,
            omega_sum,
            (applied + unapplied) as f64 / denom as f64,
            omega_sum as f64 / (k + 1) as f64
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c04_timing() -> Verdict {
    let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
    let times = vec![1.0, 1.5, 2.5, 4.0, 6.5];
    let t_max = 6.5;
    let t_bar = 1.0 / times.iter().map(|t| 1.0 / t).sum::<f64>();
    let mut cfg = RunConfig::new(Mode::Sync, 5, 200, 1, 0);
    cfg.compute = ComputeModel::Deterministic { times };
    cfg.exact_metrics = false;
    let syn = run_sync(&mdp, &cfg).unwrap();
    let mut prev = 0.0;
    let mut exact = true;
    for r in &syn.rows {
        exact &= r.sim_time == prev + t_max;
        prev = r.sim_time;
    }
    cfg.mode = Mode::Async;
    cfg.iterations = 10_000;
    let asy = run_async(&mdp, &cfg).unwrap();
    let mean = asy.total_sim_time() / 10_000.0;
    let rel = (mean - t_bar).abs() / t_bar;
    verdict(
        exact && rel <= 0.01,
        format!("sync rounds all exactly t_max = {t_max}: {exact}; async mean {mean:.6} vs t_bar {t_bar:.6} (rel {rel:.2e}, tolerance 1%)"),
    )
}

fn c05_speedup() -> Verdict {
    let mdp = TabularMDP::bandit(&[1.0, 0.0]).unwrap();
    let base = RunConfig::new(Mode::Async, 1, 1, 1, 0);
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [4usize, 8] {
        let mut pts = Vec::new();
        let mut worst = 0.0f64;
        for r in [1.0, 2.0, 4.0, 8.0] {
            let s = speedup_experiment(&mdp, &base, n, r, 8000).unwrap();
            let closed = ((n as f64 - 1.0) * r + 1.0) / n as f64;
            worst = worst.max((s.measured / closed - 1.0).abs());
            pts.push((r, s.measured));
        }
        let increasing = pts.windows(2).all(|w| w[1].1 > w[0].1);
        let slope = afedpg::checks::fit_slope(&pts);
        let want = (n as f64 - 1.0) / n as f64;
        let slope_rel = (slope - want).abs() / want;
        ok &= worst <= 0.02 && increasing && slope_rel <= 0.05;
        parts.push(format!("N={n}: max rel err {worst:.2e}, slope {slope:.4} vs {want:.4}, increasing {increasing}"));
    }
    verdict(ok, parts.join("; "))
}

fn c06_unbiasedness() -> Verdict {
    let n = 10_000;
    let mut ok = true;
    let mut parts = Vec::new();
    let cases = [
        ("bandit", TabularMDP::bandit(&[1.0, 0.0]).unwrap(), vec![0.0, 0.0]),
        ("bandit", TabularMDP::bandit(&[1.0, 0.0]).unwrap(), vec![0.7, -0.4]),
        ("chain", chain(), vec![0.0; 10]),
        ("chain", chain(), vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.0, 0.2, -0.1, 0.9]),
    ];
    for (i, (name, mdp, theta)) in cases.into_iter().enumerate() {
        let pol = SoftmaxPolicy::from_theta(mdp.num_states(), mdp.num_actions(), theta).unwrap();
        let h = truncation_horizon(mdp.gamma(), 1e-6);
        let mut rng = named_stream(6, "acceptance-unbiased", i as u64, 0);
        let est = estimate_sigma_g(&mdp, &pol, h, n, DiscountMode::Absolute, &mut rng).unwrap();
        let budget = truncation_bias_bound(mdp.gamma(), h, mdp.r_max(), score_bounds(mdp.num_actions()).m_g);
        let bound = 3.0 * est.sigma_g_hat / (n as f64).sqrt() + budget;
        ok &= est.bias_norm() <= bound;
        parts.push(format!("{name}: {:.2e} <= {bound:.2e}", est.bias_norm()));
    }
    verdict(ok, parts.join("; "))
}

fn c07_ascent() -> Verdict {
    let mdp = chain();
    let cfg = RunConfig::new(Mode::Async, 4, 200, chain_horizon(), 0);
    let log = run_async(&mdp, &cfg).unwrap();
    let b = score_bounds(2);
    let c = smoothness_constants(b.m_g, b.m_h, mdp.r_max(), mdp.gamma());
    let returns = log.returns().unwrap();
    let residual = |l_g: f64| {
        log.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (g, e) = (r.grad_norm.unwrap(), r.error_norm.unwrap());
                -returns[i + 1] - (-returns[i] - r.eta * g / 3.0 + 8.0 * r.eta * e / 3.0 + 0.5 * l_g * r.eta * r.eta)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let strict = residual(c.l_g);
    let control = residual(c.l_g / 100.0);
    let without_curvature = residual(0.0);
    verdict(
        strict <= 1e-9 && control > 1e-9,
        format!(
            "L_g = {:.1}: max residual {strict:.3e} (holds: {}); L_g/100 control max residual {control:.3e} (violates: {}); \
             even L_g = 0 gives {without_curvature:.3e}",
            c.l_g,
            strict <= 1e-9,
            control > 1e-9
        ),
    )
}

fn c08_error_recursion() -> Verdict {
    let mdp = chain();
    let mut cfg = RunConfig::new(Mode::Async, 4, 200, chain_horizon(), 3);
    cfg.record_trace = true;
    let log = run_async(&mdp, &cfg).unwrap();
    let trace = log.trace.unwrap();
    let idx: Vec<usize> = (0..50).map(|i| i * trace.len() / 50).collect();
    let ch = error_recursion_check(&MdpObjective { mdp: &mdp }, &trace, Variant::ServerAnchor, &idx, 1e-6).unwrap();
    let q = QuadraticObjective::new(vec![3.0, 0.4, -0.2, 0.4, 1.5, 0.3, -0.2, 0.3, 0.8], vec![0.5, -1.0, 2.0]).unwrap();
    let qt = objective_trace(&q, vec![0.1, 0.0, -0.1], Schedules::new(0.5, 0.8, 1.0).unwrap(), 4, 300, 0.5, 8).unwrap();
    let all: Vec<usize> = (0..qt.len()).collect();
    let qr = error_recursion_check(&q, &qt, Variant::ServerAnchor, &all, 1e-12).unwrap();
    verdict(
        ch.passed && qr.passed && ch.sample_count == 50,
        format!(
            "chain: max discrepancy {:.2e} on 50 iterations (tolerance 1e-6); quadratic: {:.2e} on {} iterations (tolerance 1e-12)",
            ch.max_violation, qr.max_violation, qr.sample_count
        ),
    )
}

fn c09_learning_rate_lemmas() -> Verdict {
    let mut ok = true;
    let mut worst6 = f64::NEG_INFINITY;
    for p in [0.5, 0.8, 1.0] {
        for c in [1.0, 2.0] {
            for rep in lr_bound_check(p, c, 100_000) {
                ok &= rep.passed;
                worst6 = worst6.max(rep.max_violation);
            }
        }
    }
    let mut worst7 = f64::NEG_INFINITY;
    for q in [1.6, 1.2] {
        let rep = lr_seq_bound_check(0.8, q, 1.0, 10_000, Strictness::StrictInequality);
        ok &= rep.passed;
        worst7 = worst7.max(rep.max_violation);
    }
    let degenerate = lr_seq_bound_check(0.8, 0.0, 1.0, 10_000, Strictness::ReportOnly);
    let documented = step_sum_constant(0.8, 0.0) == 0.0
        && !degenerate.is_failure()
        && degenerate.notes.iter().any(|n| n.contains("not positive"));
    ok &= documented;
    verdict(
        ok,
        format!(
            "step/product bounds max violation {worst6:.2e} (tolerance 1e-12); sum bounds max violation {worst7:.3e}; \
             (4/5, 0) gives c = 0, reported only: {documented}"
        ),
    )
}

fn seeds_in_parallel<T: Send>(seeds: u64, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..seeds).map(|seed| s.spawn({ let f = &f; move || f(seed) })).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn gridworld_config() -> ExperimentConfig {
    bundled("gridworld_async").unwrap()
}

fn c10_convergence() -> Verdict {
    let cfg = gridworld_config();
    let mdp = cfg.env.build().unwrap();
    let reached = seeds_in_parallel(10, |seed| {
        let mut rc = cfg.run_config();
        rc.seed = seed;
        samples_to_threshold(&run(&mdp, &rc).unwrap(), ThresholdRule::default())
    });
    let hits = reached.iter().filter(|r| r.is_some()).count();
    verdict(
        hits >= 9,
        format!(
            "5x5 gridworld, N=4, K=20000, eta0={}: {hits}/10 seeds reach the 100-iterate mean gap <= 0.05 of the initial gap; samples {:?}",
            cfg.schedules.eta0,
            reached
        ),
    )
}

fn c11_sample_complexity() -> Verdict {
    let cfg = gridworld_config();
    let mdp = cfg.env.build().unwrap();
    let median_for = |n: usize| {
        let mut v: Vec<f64> = seeds_in_parallel(10, |seed| {
            let mut rc = cfg.run_config();
            rc.seed = seed;
            rc.num_agents = n;
            rc.compute = ComputeModel::homogeneous(n, 1.0);
            samples_to_threshold(&run(&mdp, &rc).unwrap(), ThresholdRule::default()).map_or(f64::INFINITY, |s| s as f64)
        });
        v.sort_by(f64::total_cmp);
        (0.5 * (v[4] + v[5]), v)
    };
    let (m1, v1) = median_for(1);
    let (m8, v8) = median_for(8);
    let ratio = m8 / m1;
    verdict(
        ratio <= 1.5,
        format!(
            "5x5 gridworld, eta0={}: median samples N=1 {m1}, N=8 {m8}, ratio {ratio:.3} (limit 1.5), per-agent ratio {:.3}; N=1 {v1:?}; N=8 {v8:?}",
            cfg.schedules.eta0,
            ratio / 8.0
        ),
    )
}

fn c12_determinism() -> Verdict {
    let mdp = chain();
    let mut ok = true;
    let mut parts = Vec::new();
    for (mode, n) in [(Mode::Async, 4), (Mode::Sync, 4), (Mode::Single, 1)] {
        let mut cfg = RunConfig::new(mode, n, 300, chain_horizon(), 42);
        cfg.compute = if n > 1 {
            ComputeModel::LogNormal { medians: vec![1.0, 1.2, 2.0, 3.5], sigma: 0.5, shift: 0.1 }
        } else {
            ComputeModel::homogeneous(1, 1.0)
        };
        let bytes = || {
            let mut buf = Vec::new();
            write_log(&mut buf, &run(&mdp, &cfg).unwrap().rows).unwrap();
            buf
        };
        let (a, b) = (bytes(), bytes());
        ok &= a == b;
        parts.push(format!("{mode}: {} bytes, identical {}", a.len(), a == b));
    }
    verdict(ok, parts.join("; "))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 12] = [
        (1, "lookahead cancellation", c01_cancellation),
        (2, "normalized step", c02_normalized_step),
        (3, "delay accounting", c03_delay_accounting),
        (4, "timing model", c04_timing),
        (5, "straggler speedup", c05_speedup),
        (6, "estimator unbiasedness", c06_unbiasedness),
        (7, "ascent inequality and its control", c07_ascent),
        (8, "error recursion", c08_error_recursion),
        (9, "learning-rate bounds", c09_learning_rate_lemmas),
        (10, "gridworld convergence", c10_convergence),
        (11, "sample-complexity speedup", c11_sample_complexity),
        (12, "determinism", c12_determinism),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {tag:<12} {name} [{:.1}s]: {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
