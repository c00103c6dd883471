//! `rsm` — CLI for the retrial supermarket mean-field toolkit.

mod output;
mod reproduce;

use clap::{Args, Parser, Subcommand, ValueEnum};
use output::{deliver, number, render, Format, Table};
use retrial_supermarket::fixedpoint::{self, fixed_point};
use retrial_supermarket::lyapunov::{check_domination, compute_weights, fit_decay};
use retrial_supermarket::meanfield::{integrate, OdeConfig, StateVector};
use retrial_supermarket::simulator::{run, RetrialPolicy, SimConfig};
use retrial_supermarket::sojourn::{self, expected_sojourn};
use retrial_supermarket::{Error, ModelParams};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rsm", version, about = "Retrial supermarket model: fixed point, mean-field ODE, sojourn times, convergence diagnostics, and discrete-event simulation", max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    /// Arrival rate per server.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda: f64,
    /// Service rate.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    mu: f64,
    /// Retrial rate per orbiting customer.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    theta: f64,
    /// Primary probe count.
    #[arg(long, default_value_t = 1)]
    d1: u32,
    /// Retrial probe count.
    #[arg(long, default_value_t = 1)]
    d2: u32,
}

impl ParamArgs {
    fn build(&self) -> Result<ModelParams, Error> {
        ModelParams::new(self.lambda, self.mu, self.theta, self.d1, self.d2)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file (stdout when omitted); written via temp file + rename.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value file mirroring the long flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    MigrateMin,
    HomeServer,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    /// All servers idle, all orbits empty.
    Empty,
    /// Start at the computed fixed point.
    FixedPoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Target {
    EtaTable,
    Table1,
    Table2,
    Table3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the fixed point (per-level tail fractions pi_W, pi_I).
    FixedPoint {
        #[command(flatten)]
        params: ParamArgs,
        /// Truncation level.
        #[arg(long, default_value_t = fixedpoint::DEFAULT_K_MAX)]
        k_max: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Integrate the mean-field ODE system and emit trajectory samples.
    Ode {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = fixedpoint::DEFAULT_K_MAX)]
        k_max: usize,
        /// Integration horizon.
        #[arg(long, default_value_t = 200.0)]
        t_max: f64,
        /// RK4 step size.
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Keep every Nth step in the output.
        #[arg(long, default_value_t = 1000)]
        sample_every: usize,
        /// Initial state.
        #[arg(long, value_enum, default_value_t = InitArg::Empty)]
        init: InitArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Expected sojourn time and its per-level conditional components.
    Sojourn {
        #[command(flatten)]
        params: ParamArgs,
        /// Series truncation budget.
        #[arg(long, default_value_t = sojourn::DEFAULT_K_SUM)]
        k_sum: usize,
        /// Stop once a summand falls below this.
        #[arg(long, default_value_t = sojourn::DEFAULT_TERM_TOL)]
        term_tol: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Discrete-event simulation of the finite-n system.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        /// Server count.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        replications: u32,
        /// Retrial policy.
        #[arg(long, value_enum, default_value_t = PolicyArg::MigrateMin)]
        policy: PolicyArg,
        /// Total events per replication.
        #[arg(long, default_value_t = 1_000_000)]
        horizon_events: u64,
        /// Warmup events (default: 20% of the horizon).
        #[arg(long)]
        warmup_events: Option<u64>,
        /// Deepest orbit level tracked.
        #[arg(long, default_value_t = 32)]
        k_max: usize,
        /// Probe distinct servers instead of sampling with replacement.
        #[arg(long)]
        without_replacement: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exponential-convergence diagnostics: decay fit, domination verdict,
    /// weight-construction feasibility.
    Convergence {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = fixedpoint::DEFAULT_K_MAX)]
        k_max: usize,
        #[arg(long, default_value_t = 200.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Target decay rate for the weight construction (default: half the
        /// fitted rate).
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Recompute published reference numbers and diff against them.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn main() -> ExitCode {
    let args = expand_config_args(std::env::args().collect());
    let cli = match args {
        Ok(argv) => Cli::parse_from(argv),
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Expand `--config FILE` (a flat key=value file whose keys mirror the long
/// flags) into argv entries for keys not given explicitly.
fn expand_config_args(mut argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return Ok(argv);
    };
    let path = argv.get(pos + 1).cloned().ok_or("--config needs a file path")?;
    let text =
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(format!("{path}:{}: expected key=value", lineno + 1))?;
        let flag = format!("--{}", key.trim());
        if argv.contains(&flag) {
            continue;
        }
        let value = value.trim();
        argv.push(flag);
        if !value.is_empty() {
            argv.push(value.to_string());
        }
    }
    Ok(argv)
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::FixedPoint { params, k_max, output } => {
            let params = params.build()?;
            let fp = fixed_point(&params, k_max);
            let mut table = Table::new(vec!["k", "pi_W", "pi_I"]);
            for k in 0..=k_max {
                table.push(vec![json!(k), number(fp.pi_w[k]), number(fp.pi_i[k])]);
            }
            emit(&table, &output, Some(&params), None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ode { params, k_max, t_max, dt, sample_every, init, output } => {
            let params = params.build()?;
            let config = OdeConfig { k_max, dt, t_max, sample_every, ..Default::default() };
            let initial = match init {
                InitArg::Empty => StateVector::empty(k_max),
                InitArg::FixedPoint => StateVector::at_fixed_point(&fixed_point(&params, k_max)),
            };
            let traj = integrate(&initial, &params, &config)?;
            let mut table = Table::new(vec!["t", "k", "s_W", "s_I"]);
            for s in &traj.samples {
                for k in 0..=k_max {
                    table.push(vec![number(s.t), json!(k), number(s.s_w[k]), number(s.s_i[k])]);
                }
            }
            emit(&table, &output, Some(&params), None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sojourn { params, k_sum, term_tol, output } => {
            let params = params.build()?;
            let fp = fixed_point(&params, k_sum + 2);
            let t = expected_sojourn(&fp, &params, k_sum, term_tol);
            let mut table = Table::new(vec!["key", "k", "value"]);
            for (k, v) in t.t_primary.iter().enumerate() {
                table.push(vec![json!("t_primary"), json!(k), number(*v)]);
            }
            for (i, v) in t.t_retrial.iter().enumerate() {
                table.push(vec![json!("t_retrial"), json!(i + 1), number(*v)]);
            }
            for (key, v) in [("total", t.total), ("tail_bound", t.tail_bound)] {
                table.push(vec![json!(key), Value::Null, number(v)]);
            }
            table.push(vec![json!("truncated_by_budget"), Value::Null, json!(t.truncated_by_budget)]);
            table.push(vec![json!("has_negative_terms"), Value::Null, json!(t.has_negative_terms)]);
            emit(&table, &output, Some(&params), None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            params,
            n,
            seed,
            replications,
            policy,
            horizon_events,
            warmup_events,
            k_max,
            without_replacement,
            output,
        } => {
            let params = params.build()?;
            let config = SimConfig {
                n,
                params,
                retrial_policy: match policy {
                    PolicyArg::MigrateMin => RetrialPolicy::MigrateMin,
                    PolicyArg::HomeServer => RetrialPolicy::HomeServer,
                },
                horizon_events,
                warmup_events: warmup_events.unwrap_or(horizon_events / 5),
                seed,
                replications,
                k_max,
                probe_without_replacement: without_replacement,
            };
            let result = run(&config)?;
            let mut table = Table::new(vec!["key", "k", "value"]);
            for k in 0..=k_max {
                table.push(vec![json!("x_W"), json!(k), number(result.snapshot.x_w[k])]);
                table.push(vec![json!("se_W"), json!(k), number(result.se_w[k])]);
                table.push(vec![json!("x_I"), json!(k), number(result.snapshot.x_i[k])]);
                table.push(vec![json!("se_I"), json!(k), number(result.se_i[k])]);
            }
            for (key, v) in [
                ("busy_fraction", result.busy_fraction),
                ("busy_fraction_se", result.busy_fraction_se),
                ("mean_orbit", result.mean_orbit),
                ("mean_orbit_se", result.mean_orbit_se),
            ] {
                table.push(vec![json!(key), Value::Null, number(v)]);
            }
            for (key, v) in [
                ("events_arrivals_to_service", result.events.arrivals_to_service),
                ("events_arrivals_to_orbit", result.events.arrivals_to_orbit),
                ("events_completions", result.events.completions),
                ("events_retrial_successes", result.events.retrial_successes),
                ("events_retrial_failures", result.events.retrial_failures),
            ] {
                table.push(vec![json!(key), Value::Null, json!(v)]);
            }
            emit(&table, &output, Some(&params), Some(seed))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Convergence { params, k_max, t_max, dt, delta, output } => {
            let params = params.build()?;
            let fp = fixed_point(&params, k_max);
            let config = OdeConfig { k_max, dt, t_max, sample_every: 100, ..Default::default() };
            let traj = integrate(&StateVector::empty(k_max), &params, &config)?;
            let fit = fit_decay(&traj, &fp)?;
            let dominated = check_domination(&traj, &fp)?;
            // Weight construction probed at the sample nearest t_max/4,
            // where the state is well away from both endpoints.
            let probe_t = 0.25 * t_max;
            let probe_state = traj
                .samples
                .iter()
                .min_by(|a, b| {
                    (a.t - probe_t).abs().partial_cmp(&(b.t - probe_t).abs()).unwrap()
                })
                .expect("trajectory is nonempty");
            let delta = delta.unwrap_or(0.5 * fit.delta_hat);
            let feasible = match compute_weights(probe_state, &fp, &params, delta) {
                Ok(w) => json!(w.feasible),
                Err(_) => json!("singular"),
            };
            let mut table = Table::new(vec!["key", "value"]);
            for (key, v) in [
                ("delta_hat", fit.delta_hat),
                ("c0_hat", fit.c0_hat),
                ("r_squared", fit.r_squared),
                ("window_start", fit.window.0),
                ("window_end", fit.window.1),
                ("weights_delta", delta),
            ] {
                table.push(vec![json!(key), number(v)]);
            }
            table.push(vec![json!("domination"), json!(dominated)]);
            table.push(vec![json!("weights_feasible"), feasible]);
            emit(&table, &output, Some(&params), None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Reproduce { target, output } => {
            let (table, all_pass) = match target {
                Target::EtaTable => reproduce::eta_table(),
                Target::Table1 => reproduce::table1(),
                Target::Table2 => reproduce::table2(),
                Target::Table3 => reproduce::table3(),
                Target::Fig4 => (reproduce::fig4(), true),
                Target::Fig5 => (reproduce::fig5(), true),
                Target::Fig6 => (reproduce::fig6(), true),
                Target::Fig7 => (reproduce::fig7(), true),
            };
            emit(&table, &output, None, None)?;
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: some cells differ from the published values beyond tolerance");
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn emit(
    table: &Table,
    output: &OutputArgs,
    params: Option<&ModelParams>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let content = render(table, output.format, params, seed);
    deliver(&content, output.out.as_ref())
        .map_err(|e| Error::InvalidConfig(format!("cannot write output: {e}")))
}
