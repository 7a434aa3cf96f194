//! Command-line front end: scenario execution, CSV emission, and SVG plots.

pub mod config;
pub mod csvlog;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use safe_mbrl::scenarios::{scenario_by_name, scenario_names};
use safe_mbrl::sim::{run_scenario, ControllerMode, ScenarioConfig, SimLog, TerminalStatus};

/// Process exit codes: 0 success, 1 runtime/IO failure, 2 usage error.
#[derive(Debug)]
pub enum CliFailure {
    Usage(String),
    Runtime(String),
}

impl CliFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliFailure::Usage(_) => 2,
            CliFailure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliFailure::Usage(m) | CliFailure::Runtime(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "safe-mbrl",
    about = "Barrier-safeguarded online actor-critic control simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one scenario (a builtin name, or a config file via --config).
    Run {
        /// Builtin scenario name; see `list`.
        scenario: Option<String>,
        /// Path to a key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for logs and plots.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Controller mode override (rl_safeguarded, rl_unguarded,
        /// rl_barrier_cost, lqr_safeguarded).
        #[arg(long)]
        mode: Option<String>,
        /// Safeguard gain override.
        #[arg(long)]
        c_b: Option<f64>,
        /// Start state override, e.g. "-2.5,0".
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Also render SVG plots.
        #[arg(long)]
        plot: bool,
        /// Keep every Nth log row in the CSV.
        #[arg(long, default_value_t = 10)]
        decimate: usize,
    },
    /// Print the builtin scenario names.
    List,
    /// Run every builtin scenario.
    All {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Shared seed override for the whole batch.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plot: bool,
        #[arg(long, default_value_t = 10)]
        decimate: usize,
    },
}

/// Execute a parsed command; `main` maps the result to the exit code.
pub fn execute(cli: Cli) -> Result<(), CliFailure> {
    match cli.command {
        Command::List => {
            for name in scenario_names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Run {
            scenario,
            config,
            out,
            seed,
            dt,
            horizon,
            mode,
            c_b,
            x0,
            plot,
            decimate,
        } => {
            let mut cfg = load_scenario(scenario.as_deref(), config.as_deref())?;
            apply_overrides(&mut cfg, seed, dt, horizon, mode.as_deref(), c_b, x0.as_deref())?;
            let outcome = run_one(&cfg, &out, plot, decimate)?;
            if outcome.status == TerminalStatus::Completed {
                Ok(())
            } else {
                Err(CliFailure::Runtime(format!(
                    "scenario '{}' ended with status {}",
                    cfg.name,
                    outcome.status.as_str()
                )))
            }
        }
        Command::All {
            out,
            seed,
            plot,
            decimate,
        } => {
            let mut configs = safe_mbrl::scenarios::builtin_scenarios();
            if let Some(s) = seed {
                for c in &mut configs {
                    c.seed = s;
                }
            }
            std::fs::create_dir_all(&out)
                .map_err(|e| CliFailure::Runtime(format!("cannot create {}: {e}", out.display())))?;
            // Scenarios are independent; run them on worker threads and
            // report in canonical order.
            let results: Vec<Result<RunOutcome, CliFailure>> = std::thread::scope(|scope| {
                let handles: Vec<_> = configs
                    .iter()
                    .map(|cfg| {
                        let out = out.clone();
                        scope.spawn(move || run_one(cfg, &out, plot, decimate))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            let mut all_completed = true;
            for r in results {
                let outcome = r?;
                all_completed &= outcome.status == TerminalStatus::Completed;
            }
            if all_completed {
                Ok(())
            } else {
                Err(CliFailure::Runtime(
                    "one or more scenarios did not complete".into(),
                ))
            }
        }
    }
}

fn load_scenario(
    name: Option<&str>,
    config: Option<&Path>,
) -> Result<ScenarioConfig, CliFailure> {
    match (name, config) {
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliFailure::Runtime(format!("cannot read {}: {e}", path.display()))
            })?;
            config::parse_config(&text).map_err(CliFailure::Usage)
        }
        (Some(n), None) => scenario_by_name(n).ok_or_else(|| {
            CliFailure::Usage(format!(
                "unknown scenario '{n}'; valid scenarios: {}",
                scenario_names().join(", ")
            ))
        }),
        (None, None) => Err(CliFailure::Usage(
            "run needs a scenario name or --config <path>".into(),
        )),
    }
}

fn apply_overrides(
    cfg: &mut ScenarioConfig,
    seed: Option<u64>,
    dt: Option<f64>,
    horizon: Option<f64>,
    mode: Option<&str>,
    c_b: Option<f64>,
    x0: Option<&str>,
) -> Result<(), CliFailure> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = dt {
        cfg.dt = v;
    }
    if let Some(v) = horizon {
        cfg.horizon = v;
    }
    if let Some(m) = mode {
        cfg.mode = m
            .parse::<ControllerMode>()
            .map_err(|e| CliFailure::Usage(e.to_string()))?;
    }
    if let Some(v) = c_b {
        cfg.c_b = v;
    }
    if let Some(s) = x0 {
        cfg.x0 = config::parse_vec(s)
            .map_err(|_| CliFailure::Usage(format!("invalid --x0 '{s}'")))?;
    }
    Ok(())
}

struct RunOutcome {
    status: TerminalStatus,
}

fn run_one(
    cfg: &ScenarioConfig,
    out: &Path,
    plot: bool,
    decimate: usize,
) -> Result<RunOutcome, CliFailure> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliFailure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let log = run_scenario(cfg).map_err(|e| CliFailure::Usage(e.to_string()))?;
    let csv_path = out.join(format!("{}.csv", cfg.name));
    csvlog::write_log(&log, &csv_path, decimate)
        .map_err(|e| CliFailure::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    if plot {
        plot::render_plots(&log, cfg, out)
            .map_err(|e| CliFailure::Runtime(format!("cannot write plots: {e}")))?;
    }
    print_summary(cfg, &log, &csv_path);
    Ok(RunOutcome { status: log.status })
}

fn print_summary(cfg: &ScenarioConfig, log: &SimLog, csv_path: &Path) {
    let violations = log.records.iter().filter(|r| r.h <= 0.0).count();
    let first_violation = log
        .first_violation_time
        .map(|t| format!("{t:.3}"))
        .unwrap_or_else(|| "none".into());
    let gamma_lo = log
        .records
        .iter()
        .map(|r| r.gamma_min)
        .fold(f64::INFINITY, f64::min);
    let pe = log
        .pe
        .map(|p| format!("c1={:.3e} c2={:.3e} c3={:.3e}", p.c1, p.c2, p.c3))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{}: mode={} status={} steps={} min_h={:.4} |x(T)|={:.4} violations={} first_violation={} gamma_min={:.3e} pe[{}] -> {}",
        cfg.name,
        cfg.mode,
        log.status.as_str(),
        log.records.len().saturating_sub(1),
        log.min_h(),
        log.terminal_state_norm(),
        violations,
        first_violation,
        gamma_lo,
        pe,
        csv_path.display()
    );
}
