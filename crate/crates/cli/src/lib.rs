//! Argument handling and command runners behind the `edgealloc` binary.
//!
//! Exit codes: 0 success, 2 bad input, 3 scenario not ranking-eligible,
//! 4 infeasible, 5 solver failure.

pub mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgealloc::baseline::{throughput_fairness, time_fairness};
use edgealloc::config::ScenarioConfig;
use edgealloc::dcp::{solve_dcp, DcpOptions};
use edgealloc::fitcurve::{fit_power_law, read_points_csv, FitConfig};
use edgealloc::ranking::solve_ranking;
use edgealloc::sim::{
    builtin_scenario, builtin_sweep, channel_rng, reproduce_vehicular, run_sweep,
    MonteCarloSummary, SweepConfig, BUILTIN_SWEEPS, CNN_POINTS, SVM_POINTS,
};
use edgealloc::{Allocation, Error, Scenario};
use serde::{Deserialize, Serialize};

use report::{ResolvedConfig, RunReport, RunResult, SolverTrace, Timings};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INELIGIBLE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_SOLVER: u8 = 5;

const BUILTIN_SCENARIOS: [&str; 2] = ["vehicular", "table1"];

#[derive(Debug, Parser)]
#[command(
    name = "edgealloc",
    version,
    about = "Learning-driven time and energy allocation for edge training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit err ≈ a·v^(-b) to a `v,err` CSV file.
    Fit(FitArgs),
    /// Allocate time and energy for one scenario.
    Solve(SolveArgs),
    /// Monte Carlo sweep from a built-in name or a JSON config.
    Sweep(SweepArgs),
    /// Regenerate a built-in experiment: vehicular, table1, fig2a, fig2b or k4_vs_k6.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Curve {
    Cnn,
    Svm,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with header `v,err`.
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    pub input: Option<PathBuf>,
    /// Use one of the bundled point sets instead of a file.
    #[arg(long, value_enum)]
    pub builtin: Option<Curve>,
    /// Also try jittered starting exponents.
    #[arg(long)]
    pub multi_start: bool,
    /// Write the JSON run report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ranking,
    Dcp,
    TimeFair,
    ThroughputFair,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario JSON file, or a built-in name (vehicular, table1).
    pub scenario: String,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Seed for channels marked "random".
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bisection tolerance of the ranking solver.
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
    /// Outer iteration limit of the dcp solver.
    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,
    /// Write the JSON run report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-user table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Built-in sweep (fig2a, fig2b, k4_vs_k6) or a sweep JSON file.
    pub sweep: String,
    #[command(flatten)]
    pub overrides: SweepOverrides,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    pub target: String,
    #[command(flatten)]
    pub overrides: SweepOverrides,
}

#[derive(Debug, Args)]
pub struct SweepOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Write the JSON run report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the summary table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// A failed command: message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) | Error::InvalidInput(_) => EXIT_INPUT,
            Error::Ineligible { .. } | Error::Unsupported(_) => EXIT_INELIGIBLE,
            Error::Capacity { .. } | Error::Infeasible { .. } | Error::Degenerate(_) => {
                EXIT_INFEASIBLE
            }
            Error::Validation(_) | Error::Convergence { .. } => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs a parsed command, printing a human-readable summary to `stdout`.
pub fn run(cli: &Cli, argv: Vec<String>, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let (seed, config, result, out) = match &cli.command {
        Command::Fit(args) => {
            let (config, result) = fit(args, stdout)?;
            (None, config, result, args.out.as_deref())
        }
        Command::Solve(args) => {
            let (config, result) = solve(args, stdout)?;
            (Some(args.seed), config, result, args.out.as_deref())
        }
        Command::Sweep(args) => {
            let config = load_sweep(&args.sweep)?;
            let (config, result) = sweep(config, &args.overrides, stdout)?;
            (
                Some(config_seed(&config)),
                config,
                result,
                args.overrides.out.as_deref(),
            )
        }
        Command::Reproduce(args) => {
            let (config, result) = reproduce(args, stdout)?;
            let seed = match &config {
                ResolvedConfig::Sweep(c) => Some(c.seed),
                _ => None,
            };
            (seed, config, result, args.overrides.out.as_deref())
        }
    };
    if let Some(path) = out {
        let report = RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: argv,
            seed,
            config,
            result,
            timings: Timings {
                wall_s: start.elapsed().as_secs_f64(),
            },
        };
        std::fs::write(path, report.to_json())
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn config_seed(config: &ResolvedConfig) -> u64 {
    match config {
        ResolvedConfig::Sweep(c) => c.seed,
        _ => unreachable!("sweep commands resolve to a sweep config"),
    }
}

fn fit(args: &FitArgs, stdout: &mut dyn Write) -> CliResult<(ResolvedConfig, RunResult)> {
    let (source, points) = match (&args.input, args.builtin) {
        (_, Some(Curve::Cnn)) => (
            "builtin:cnn".to_string(),
            read_points_csv(CNN_POINTS.as_bytes())?,
        ),
        (_, Some(Curve::Svm)) => (
            "builtin:svm".to_string(),
            read_points_csv(SVM_POINTS.as_bytes())?,
        ),
        (Some(path), None) => {
            let file =
                File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let points = read_points_csv(file)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            (path.display().to_string(), points)
        }
        (None, None) => return Err(Failure::input("give a CSV file or --builtin")),
    };
    let config = FitConfig {
        multi_start: args.multi_start,
        ..FitConfig::default()
    };
    let result = fit_power_law(&points, &config)?;
    writeln!(stdout, "a = {:.9}", result.a)?;
    writeln!(stdout, "b = {:.9}", result.b)?;
    writeln!(
        stdout,
        "sse = {:.6e} ({} iterations)",
        result.residual_sse, result.iterations
    )?;
    Ok((
        ResolvedConfig::Fit {
            source,
            points,
            fit: config,
        },
        RunResult::Fit(result),
    ))
}

fn load_scenario(name: &str, seed: u64) -> CliResult<Scenario> {
    let path = Path::new(name);
    if !path.exists() && BUILTIN_SCENARIOS.contains(&name) {
        return Ok(builtin_scenario(name)?);
    }
    let config = ScenarioConfig::load(path)?;
    Ok(config.resolve(&mut channel_rng(seed, 0))?)
}

fn solve(args: &SolveArgs, stdout: &mut dyn Write) -> CliResult<(ResolvedConfig, RunResult)> {
    let scenario = load_scenario(&args.scenario, args.seed)?;
    let dcp = DcpOptions {
        max_outer: args.max_outer,
        ..DcpOptions::default()
    };
    let (allocation, trace) = match args.method {
        Method::Ranking => {
            let (a, t) = solve_ranking(&scenario, args.epsilon)?;
            (a, SolverTrace::Ranking(t))
        }
        Method::Dcp => {
            let (a, t) = solve_dcp(&scenario, &dcp)?;
            (a, SolverTrace::Dcp(t))
        }
        Method::TimeFair => (time_fairness(&scenario)?, SolverTrace::None),
        Method::ThroughputFair => (throughput_fairness(&scenario)?, SolverTrace::None),
    };
    print_allocation(&scenario, &allocation, stdout)?;
    if let Some(path) = &args.csv {
        let file =
            File::create(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        write_user_table(&scenario, &allocation, BufWriter::new(file))?;
    }
    Ok((
        ResolvedConfig::Solve {
            scenario,
            method: args.method,
            epsilon: args.epsilon,
            dcp,
        },
        RunResult::Solve { allocation, trace },
    ))
}

/// Per-user rows `user,t_s,E_J,bits,samples`.
pub fn write_user_table<W: Write>(
    scenario: &Scenario,
    allocation: &Allocation,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "user,t_s,E_J,bits,samples")?;
    for u in scenario.users() {
        let bits = allocation.bits[&u.user_id];
        writeln!(
            out,
            "{},{},{},{},{}",
            u.user_id.0,
            allocation.time[&u.user_id],
            allocation.energy[&u.user_id],
            bits,
            bits / u.bits_per_sample
        )?;
    }
    out.flush()
}

fn print_allocation(
    scenario: &Scenario,
    a: &Allocation,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "worst predicted error: {:.6}", a.objective)?;
    for t in scenario.tasks() {
        writeln!(
            out,
            "task {}: {} samples",
            t.task_id, a.samples_floor[&t.task_id]
        )?;
    }
    writeln!(
        out,
        "{:>6} {:>14} {:>14} {:>12}",
        "user", "time (s)", "energy (J)", "samples"
    )?;
    for u in scenario.users() {
        writeln!(
            out,
            "{:>6} {:>14.6} {:>14.6e} {:>12.3}",
            u.user_id.0,
            a.time[&u.user_id],
            a.energy[&u.user_id],
            a.bits[&u.user_id] / u.bits_per_sample
        )?;
    }
    Ok(())
}

fn load_sweep(name: &str) -> CliResult<SweepConfig> {
    let path = Path::new(name);
    if !path.exists() && BUILTIN_SWEEPS.contains(&name) {
        return Ok(builtin_sweep(name)?);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{name}: {e}")))?;
    Ok(SweepConfig::from_json(&text)?)
}

fn sweep(
    mut config: SweepConfig,
    overrides: &SweepOverrides,
    stdout: &mut dyn Write,
) -> CliResult<(ResolvedConfig, RunResult)> {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(runs) = overrides.runs {
        config.runs = runs;
    }
    if let Some(eps) = overrides.epsilon {
        config.epsilon = eps;
    }
    if let Some(m) = overrides.max_outer {
        config.dcp.max_outer = m;
    }
    let summary = run_sweep(&config)?;
    print_summary(&summary, stdout)?;
    if let Some(path) = &overrides.csv {
        let file =
            File::create(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        summary.write_csv(BufWriter::new(file))?;
    }
    Ok((ResolvedConfig::Sweep(config), RunResult::Sweep(summary)))
}

fn print_summary(s: &MonteCarloSummary, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{} (seed {})", s.name, s.seed)?;
    write!(
        out,
        "{:>10} {:>8} {:>16} {:>6} {:>12} {:>12}",
        s.parameter.name(),
        "p_max",
        "scheme",
        "runs",
        "mean",
        "std"
    )?;
    for t in &s.task_ids {
        write!(out, " {:>12}", format!("n_{t}"))?;
    }
    writeln!(out)?;
    for r in &s.rows {
        write!(
            out,
            "{:>10} {:>8} {:>16} {:>6} {:>12.6} {:>12.6}",
            r.value,
            r.p_max,
            r.scheme.name(),
            r.solved,
            r.mean_objective,
            r.std_objective
        )?;
        for t in &s.task_ids {
            match r.mean_samples.get(t) {
                Some(v) => write!(out, " {v:>12.1}")?,
                None => write!(out, " {:>12}", "-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

fn reproduce(
    args: &ReproduceArgs,
    stdout: &mut dyn Write,
) -> CliResult<(ResolvedConfig, RunResult)> {
    match args.target.as_str() {
        "vehicular" => {
            let report = reproduce_vehicular()?;
            writeln!(
                stdout,
                "{:>16} {:>10} {:>10}",
                "task", "ranking", "time_fair"
            )?;
            for (i, t) in report.task_ids.iter().enumerate() {
                writeln!(
                    stdout,
                    "{t:>16} {:>10} {:>10}",
                    report.ranking_samples[i], report.time_fair_samples[i]
                )?;
            }
            writeln!(
                stdout,
                "{:>16} {:>10.6} {:>10.6}",
                "worst error", report.ranking_error, report.time_fair_error
            )?;
            let times: Vec<String> = report
                .ranking_time
                .iter()
                .map(|t| format!("{t:.3}"))
                .collect();
            writeln!(stdout, "ranking times (s): {}", times.join(", "))?;
            Ok((
                ResolvedConfig::Scenario(builtin_scenario("vehicular")?),
                RunResult::Vehicular(report),
            ))
        }
        "table1" => {
            let scenario = builtin_scenario("table1")?;
            let (ranking, _) = solve_ranking(&scenario, 1e-12)?;
            let time_fair = time_fairness(&scenario)?;
            writeln!(stdout, "ranking")?;
            print_allocation(&scenario, &ranking, stdout)?;
            writeln!(stdout, "time_fair")?;
            print_allocation(&scenario, &time_fair, stdout)?;
            Ok((
                ResolvedConfig::Scenario(scenario),
                RunResult::Table { ranking, time_fair },
            ))
        }
        name if BUILTIN_SWEEPS.contains(&name) => {
            sweep(builtin_sweep(name)?, &args.overrides, stdout)
        }
        other => Err(Failure::input(format!(
            "unknown experiment {other:?}; choose one of vehicular, table1, {}",
            BUILTIN_SWEEPS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let code = |e: Error| Failure::from(e).code;
        assert_eq!(code(Error::InvalidInput("x".into())), EXIT_INPUT);
        assert_eq!(
            code(Error::Ineligible {
                e_max: 1.0,
                required: 2.0
            }),
            EXIT_INELIGIBLE
        );
        assert_eq!(
            code(Error::Capacity {
                task: "t".into(),
                demand: 2.0,
                capacity: 1.0
            }),
            EXIT_INFEASIBLE
        );
        assert_eq!(code(Error::Validation(vec![])), EXIT_SOLVER);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn builtin_scenario_names_resolve_without_files() {
        let s = load_scenario("vehicular", 0).unwrap();
        assert_eq!(s.users().len(), 2);
        assert_eq!(
            load_scenario("no_such_file.json", 0).unwrap_err().code,
            EXIT_INPUT
        );
    }
}
