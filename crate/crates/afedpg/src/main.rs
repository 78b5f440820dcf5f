use std::path::PathBuf;
use std::process::ExitCode;

use afedpg::checks::{self, Scope};
use afedpg::config::{self, ConfigError, ExperimentConfig};
use afedpg::output::{self, Summary};
use afedpg::sweep::{self, Axis};
use afedpg::{execute, output_dir, RunError};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "afedpg", version, about = "Asynchronous federated policy gradient on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or `bundled:<name>` for a shipped one.
    #[arg(long)]
    config: Option<String>,
    /// Output directory; defaults to the config's `output_dir`, then `$AFEDPG_OUT/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisKind {
    Agents,
    Ratio,
    Variant,
}

#[derive(Subcommand)]
enum Command {
    /// Train once; writes log.csv and summary.json.
    Run(Common),
    /// Multi-seed sweep over one axis; writes sweep.csv and runs.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisKind,
        /// Comma-separated axis values; ignored for `variant`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the check suites, or the checks of one config with `--config`.
    Check {
        #[arg(value_enum, default_value = "strict")]
        scope: Scope,
        /// Same as scope `all`.
        #[arg(long, conflicts_with = "negative_controls")]
        all: bool,
        /// Same as scope `negative-controls`.
        #[arg(long)]
        negative_controls: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, axis, values, seeds, threads } => cmd_sweep(common, axis, values, seeds, threads),
        Command::Check { scope, all, negative_controls, common } => {
            let scope = if negative_controls {
                Scope::NegativeControls
            } else if all {
                Scope::All
            } else {
                scope
            };
            cmd_check(scope, common)
        }
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
    }
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let spec = common.config.as_deref().ok_or_else(|| ConfigError {
        source_name: "<command line>".into(),
        line: None,
        column: None,
        message: "--config is required".into(),
    })?;
    let mut cfg = config::load(spec)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_name(cfg: &ExperimentConfig) -> String {
    format!("run-{}", &cfg.hash()[..12])
}

fn cmd_run(common: Common) -> anyhow::Result<u8> {
    let cfg = load(&common)?;
    let dir = output_dir(common.out.as_deref(), &cfg, &run_name(&cfg));
    match execute(&cfg) {
        Ok(outcome) => {
            output::write_run(&dir, &outcome.log, &outcome.summary)
                .with_context(|| format!("writing to {}", dir.display()))?;
            print_summary(&outcome.summary);
            for r in outcome.reports.iter().filter(|r| r.is_failure()) {
                println!("check failed: {} (max violation {:e}, tolerance {:e})", r.id, r.max_violation, r.tolerance);
            }
            println!("wrote {}", dir.display());
            Ok(if outcome.checks_passed() { 0 } else { EXIT_CHECK })
        }
        Err(RunError::Config(msg)) => Err(anyhow::anyhow!(ConfigError {
            source_name: common.config.unwrap_or_default(),
            line: None,
            column: None,
            message: msg,
        })),
        Err(RunError::Failed { message, partial }) => {
            if let Some(log) = partial {
                let summary = Summary::new(&cfg, &log, &[]);
                output::write_run(&dir, &log, &summary)?;
                eprintln!("partial log with {} applies written to {}", log.rows.len(), dir.display());
            }
            anyhow::bail!(message)
        }
    }
}

fn print_summary(s: &Summary) {
    match (s.final_gap, s.optimal_return) {
        (Some(gap), Some(j)) => println!("final gap {gap:.6} (J* = {j:.6})"),
        _ => println!("final gap not computed (exact metrics off)"),
    }
    match s.mean_delay {
        Some(d) => println!("mean delay {d:.4}, mean concurrency {:.4}", s.mean_concurrency.unwrap_or(0.0)),
        None => println!("mean delay 0 (synchronous)"),
    }
    println!("sim time {:.4}, samples {}", s.total_sim_time, s.total_samples);
}

fn parse_values<T: std::str::FromStr>(values: &[String], what: &str) -> anyhow::Result<Vec<T>> {
    if values.is_empty() {
        return Err(ConfigError {
            source_name: "--values".into(),
            line: None,
            column: None,
            message: format!("the {what} axis needs --values"),
        }
        .into());
    }
    values
        .iter()
        .map(|v| {
            v.trim().parse().map_err(|_| {
                anyhow::Error::from(ConfigError {
                    source_name: "--values".into(),
                    line: None,
                    column: None,
                    message: format!("`{v}` is not a valid {what}"),
                })
            })
        })
        .collect()
}

fn cmd_sweep(
    common: Common,
    axis: AxisKind,
    values: Vec<String>,
    seeds: u64,
    threads: Option<usize>,
) -> anyhow::Result<u8> {
    let cfg = load(&common)?;
    let axis = match axis {
        AxisKind::Agents => Axis::Agents(parse_values(&values, "agent count")?),
        AxisKind::Ratio => Axis::Ratio(parse_values(&values, "ratio")?),
        AxisKind::Variant => Axis::Variant,
    };
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let runs = sweep::run_sweep(&cfg, &axis, seeds.max(1), threads)?;
    let rows = sweep::aggregate(&cfg, &axis, &runs);
    let dir = output_dir(common.out.as_deref(), &cfg, &format!("sweep-{}-{}", axis.name(), &cfg.hash()[..12]));
    std::fs::create_dir_all(&dir)?;
    sweep::write_sweep(std::fs::File::create(dir.join("sweep.csv"))?, &rows)?;
    let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
    for r in &runs {
        w.serialize(r)?;
    }
    w.flush()?;
    sweep::write_sweep(std::io::stdout().lock(), &rows)?;
    println!("wrote {}", dir.display());
    Ok(0)
}

fn cmd_check(scope: Scope, common: Common) -> anyhow::Result<u8> {
    if common.config.is_some() {
        return check_config(common);
    }
    let results = checks::run_suites(scope);
    for s in &results {
        if let Some(e) = &s.error {
            println!("ERROR  {}: {e}", s.suite);
        }
        for r in &s.reports {
            let tag = match (s.expect_failure, r.is_failure(), r.class.is_enforced()) {
                (_, _, false) => "REPORT",
                (false, false, _) => "PASS",
                (false, true, _) => "FAIL",
                (true, true, _) => "FAILED (expected)",
                (true, false, _) => "held (control)",
            };
            println!(
                "{tag:<18} {}: {}  max violation {:e}  tolerance {:e}  samples {}",
                s.suite, r.id, r.max_violation, r.tolerance, r.sample_count
            );
            for n in &r.notes {
                println!("{:<18}   {n}", "");
            }
        }
        if s.expect_failure && !s.ok() {
            println!("CONTROL DID NOT FAIL: {}", s.suite);
        }
    }
    if let Some(dir) = common.out.or_else(|| std::env::var_os("AFEDPG_OUT").map(PathBuf::from)) {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("checks.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    }
    let ok = results.iter().all(|s| s.ok());
    println!("{}", if ok { "all suites ok" } else { "some suites failed" });
    Ok(if ok { 0 } else { EXIT_CHECK })
}

fn check_config(common: Common) -> anyhow::Result<u8> {
    let mut cfg = load(&common)?;
    cfg.checks.invariants = true;
    cfg.checks.ascent = cfg.checks.exact_metrics;
    let outcome = match execute(&cfg) {
        Ok(o) => o,
        Err(RunError::Config(msg)) => {
            return Err(ConfigError { source_name: common.config.unwrap_or_default(), line: None, column: None, message: msg }.into())
        }
        Err(e) => return Err(e.into()),
    };
    for r in &outcome.reports {
        let tag = if r.is_failure() { "FAIL" } else { "PASS" };
        println!("{tag:<6} {}  max violation {:e}  tolerance {:e}", r.id, r.max_violation, r.tolerance);
    }
    Ok(if outcome.checks_passed() { 0 } else { EXIT_CHECK })
}
