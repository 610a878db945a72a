use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use macfrontier::dataset::EmissionFactorSource;
use macfrontier::exec::Execution;
use macfrontier::montecarlo::Scenario;
use macfrontier::pipeline::{self, Command, EstimatorKind, RunConfig};
use macfrontier::technologies::Technology;
use serde::Deserialize;

/// Frontier estimation, shadow prices and marginal abatement costs for
/// emission-generating technologies.
#[derive(Parser, Debug)]
#[command(name = "macfrontier", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit a frontier to a CSV and price every unit's emissions.
    Estimate(Flags),
    /// Run the Monte Carlo grid and write RMSE tables.
    Simulate(Flags),
    /// Print the data-driven direction vector.
    Direction(Flags),
    /// Print per-column summary statistics.
    Summary(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// bp, jd or wgd (comma-separated list for simulate and direction).
    #[arg(long, value_delimiter = ',')]
    tech: Vec<Technology>,
    /// cnls or cer (comma-separated list for simulate).
    #[arg(long, value_delimiter = ',')]
    estimator: Vec<EstimatorKind>,
    /// Expectile levels, e.g. 0.05,0.2,0.35.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON map from CSV headers to roles.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// 1 or 2 (comma-separated list).
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<Scenario>,
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// Units per simulated sample.
    #[arg(long)]
    n: Option<usize>,
    /// Replications per simulation cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Feasibility tolerance for every solve.
    #[arg(long)]
    tol: Option<f64>,
    /// Price fallback for empty cells, HEADER=VALUE (repeatable).
    #[arg(long, value_parser = parse_fallback)]
    fallback: Vec<(String, f64)>,
    /// Emission factors when the data has no u column: dmu_ratio, pooled_ratio or a number.
    #[arg(long, value_parser = parse_u_source)]
    u_source: Option<EmissionFactorSource>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Simulate only: score the true frontier instead of fitting.
    #[arg(long)]
    oracle: bool,
}

/// Settings read from `--config`; every field is optional.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    technologies: Option<Vec<Technology>>,
    estimators: Option<Vec<EstimatorKind>>,
    taus: Option<Vec<f64>>,
    input: Option<PathBuf>,
    schema: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    scenarios: Option<Vec<Scenario>>,
    sigmas: Option<Vec<f64>>,
    n: Option<usize>,
    reps: Option<usize>,
    tol: Option<f64>,
    fallback: Option<BTreeMap<String, f64>>,
    u_source: Option<EmissionFactorSource>,
    execution: Option<Execution>,
    oracle: Option<bool>,
}

fn parse_fallback(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected HEADER=VALUE")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_u_source(s: &str) -> Result<EmissionFactorSource, String> {
    match s {
        "dmu_ratio" => Ok(EmissionFactorSource::DmuRatio),
        "pooled_ratio" => Ok(EmissionFactorSource::PooledRatio),
        other => other
            .parse::<f64>()
            .map(EmissionFactorSource::Constant)
            .map_err(|_| format!("'{other}' is not dmu_ratio, pooled_ratio or a number")),
    }
}

/// Defaults, then the config file, then flags.
fn resolve(command: Command, flags: Flags) -> Result<RunConfig, String> {
    let mut cfg = RunConfig { command, ..RunConfig::default() };
    if command == Command::Direction {
        cfg.technologies = vec![Technology::ByProduction, Technology::JointDisposability];
    }
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file: ConfigFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        macro_rules! take {
            ($($f:ident => $g:ident),*) => { $(if let Some(v) = file.$f { cfg.$g = v; })* };
        }
        take!(technologies => technologies, estimators => estimators, taus => taus, out_dir => out_dir,
              seed => seed, scenarios => scenarios, sigmas => sigmas, n => n, reps => reps, tol => tol,
              fallback => fallback, execution => execution, oracle => oracle);
        if file.input.is_some() {
            cfg.input = file.input;
        }
        if file.schema.is_some() {
            cfg.schema = file.schema;
        }
        if file.u_source.is_some() {
            cfg.u_source = file.u_source;
        }
    }
    macro_rules! list {
        ($($f:ident => $g:ident),*) => { $(if !flags.$f.is_empty() { cfg.$g = flags.$f; })* };
    }
    list!(tech => technologies, estimator => estimators, tau => taus, scenario => scenarios, sigma => sigmas);
    macro_rules! opt {
        ($($f:ident),*) => { $(if let Some(v) = flags.$f { cfg.$f = v; })* };
    }
    opt!(out_dir, seed, n, reps, tol);
    if flags.input.is_some() {
        cfg.input = flags.input;
    }
    if flags.schema.is_some() {
        cfg.schema = flags.schema;
    }
    if flags.u_source.is_some() {
        cfg.u_source = flags.u_source;
    }
    cfg.fallback.extend(flags.fallback);
    if flags.sequential {
        cfg.execution = Execution::Sequential;
    }
    cfg.oracle |= flags.oracle;
    Ok(cfg)
}

const EXIT_ERROR: u8 = 1;
const EXIT_INCOMPLETE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::Estimate(f) => (Command::Estimate, f),
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Direction(f) => (Command::Direction, f),
        Cmd::Summary(f) => (Command::Summary, f),
    };
    let cfg = match resolve(command, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let out = match pipeline::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let paths = match out.write(&cfg.out_dir) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let shown = match command {
        Command::Estimate => "report.json",
        Command::Simulate => "rmse_table.csv",
        Command::Direction => "direction.json",
        Command::Summary => "summary.csv",
    };
    if let Some(bytes) = out.file(shown) {
        print!("{}", String::from_utf8_lossy(bytes));
    }
    for p in &paths {
        eprintln!("wrote {}", p.display());
    }
    if !out.manifest.complete {
        for line in &out.manifest.incomplete {
            eprintln!("incomplete: {line}");
        }
        return ExitCode::from(EXIT_INCOMPLETE);
    }
    ExitCode::SUCCESS
}
