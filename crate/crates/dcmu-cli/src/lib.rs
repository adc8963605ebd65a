//! `dcmu` command-line front end: single runs, Monte-Carlo sweeps and the
//! edge-weight gradient check.
//!
//! Exit codes: 0 success, 1 usage, I/O or aborted run, 2 metric failure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod scenario_file;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dcmu_core::gradcheck::run_gradcheck;
use dcmu_core::simulator::{monte_carlo, run_episode, Algo, RunSummary, Scenario, StepRecord};
use dcmu_core::weighted_graph::GraphParams;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use scenario_file::{parse_scenario, parse_scenario_str, ParseError, ScenarioFile};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_METRIC: u8 = 2;

pub const DEFAULT_Q_GRID: [f64; 3] = [0.0, 0.01, 0.02];
pub const DEFAULT_R_GRID: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Pass threshold for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub const THREADS_ENV: &str = "DCMU_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dcmu", version, about = "Connectivity maintenance simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one seeded episode.
    Run(RunArgs),
    /// Run seeded episodes over one noise cell or a grid.
    Montecarlo(MonteCarloArgs),
    /// Compare analytic edge-weight gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Dcmu,
    Baseline,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Algo {
        match a {
            AlgoArg::Dcmu => Algo::Dcmu,
            AlgoArg::Baseline => Algo::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoChoice {
    Dcmu,
    Baseline,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Overrides the scenario's `algo`.
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// Defaults to the scenario's `algo`.
    #[arg(long, value_enum)]
    pub algo: Option<AlgoChoice>,
    /// Sweep the noise grid instead of the scenario's single (q, r) cell.
    #[arg(long)]
    pub sweep: bool,
    /// Sweep values for q (m^2), comma separated. Implies --sweep.
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<f64>>,
    /// Sweep values for r (m^2), comma separated. Implies --sweep.
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Montecarlo(a) => cmd_montecarlo(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Fixed 9-significant-digit scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

/// SHA-256 of the canonical serialization, so formatting and comments in
/// the source file do not change it.
pub fn scenario_hash(sc: &Scenario) -> String {
    let canonical = ScenarioFile::from_scenario(sc).to_toml();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn steps_header(n_robots: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "lambda2_true",
        "lambda2_weighted",
        "lambda2_est_min",
        "lambda2_est_max",
        "min_robot_dist",
        "min_obst_clearance",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n_robots {
        for c in ["x_true", "y_true", "x_nom", "y_nom"] {
            h.push(format!("{c}_{i}"));
        }
    }
    h
}

pub fn write_steps_csv<W: Write>(records: &[StepRecord], n_robots: usize, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(steps_header(n_robots))?;
    for r in records {
        let mut row = vec![
            fmt_num(r.t),
            fmt_num(r.lambda2_true),
            fmt_num(r.lambda2_weighted),
            fmt_num(r.lambda2_est_min),
            fmt_num(r.lambda2_est_max),
            fmt_num(r.min_robot_dist),
            fmt_num(r.min_obst_clearance),
        ];
        for (xt, xn) in r.x_true.iter().zip(&r.x_nom) {
            row.extend([fmt_num(xt[0]), fmt_num(xt[1]), fmt_num(xn[0]), fmt_num(xn[1])]);
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub seed: u64,
    pub success: bool,
    pub min_lambda2_true: f64,
    pub steps: usize,
    pub collision_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl From<&RunSummary> for RunEntry {
    fn from(r: &RunSummary) -> Self {
        RunEntry {
            seed: r.seed,
            success: r.success,
            min_lambda2_true: r.min_lambda2_true,
            steps: r.steps,
            collision_steps: r.collision_steps,
            aborted: r.aborted.clone(),
        }
    }
}

/// `summary.toml` written by `run`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub tool_version: String,
    pub scenario_hash: String,
    pub seed_base: u64,
    pub algo: String,
    pub q: f64,
    pub r: f64,
    pub runs: usize,
    pub successes: usize,
    /// Mean of the `run.success` flags.
    pub ratio: f64,
    pub run: Vec<RunEntry>,
}

impl SummaryReport {
    pub fn new(sc: &Scenario, seed_base: u64, runs: &[RunSummary]) -> Self {
        let successes = runs.iter().filter(|r| r.success).count();
        SummaryReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_hash: scenario_hash(sc),
            seed_base,
            algo: sc.sim.algo.name().to_string(),
            q: sc.noise.q[(0, 0)],
            r: sc.noise.r[(0, 0)],
            runs: runs.len(),
            successes,
            ratio: successes as f64 / runs.len() as f64,
            run: runs.iter().map(RunEntry::from).collect(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn cmd_run(args: &RunArgs) -> Result<u8, CliError> {
    let mut sc = parse_scenario(&args.scenario)?;
    if let Some(a) = args.algo {
        sc.sim.algo = a.into();
    }
    let metrics = run_episode(&sc, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
    create_out_dir(&args.out)?;

    let steps_path = args.out.join("steps.csv");
    let file = File::create(&steps_path).map_err(io_err(&steps_path))?;
    write_steps_csv(&metrics.records, sc.robots.len(), BufWriter::new(file)).map_err(csv_err(&steps_path))?;

    let summary = RunSummary::from(&metrics);
    let report = SummaryReport::new(&sc, args.seed, std::slice::from_ref(&summary));
    let summary_path = args.out.join("summary.toml");
    write_file(&summary_path, &toml::to_string(&report).expect("summary serializes"))?;

    println!(
        "{} seed {}: {} steps, min lambda2_true {}, {}",
        sc.sim.algo.name(),
        args.seed,
        metrics.records.len(),
        fmt_num(metrics.min_lambda2_true),
        if metrics.success { "connected" } else { "DISCONNECTED" }
    );
    if let Some(e) = &metrics.aborted {
        eprintln!("error: run aborted: {e}");
        return Ok(EXIT_ERROR);
    }
    Ok(if metrics.success { EXIT_OK } else { EXIT_METRIC })
}

/// `DCMU_THREADS`, if set, caps the worker count.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub q: f64,
    pub r: f64,
    pub algo: String,
    pub runs: usize,
    pub successes: usize,
    pub ratio: f64,
}

/// `summary.toml` written by `montecarlo`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub tool_version: String,
    pub scenario_hash: String,
    pub seed_base: u64,
    pub runs_per_cell: usize,
    pub cell: Vec<CellSummary>,
}

fn grid_values(name: &str, values: &[f64]) -> Result<Vec<f64>, CliError> {
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CliError::Config(format!("--{name} values must be finite and >= 0")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

pub fn cmd_montecarlo(args: &MonteCarloArgs) -> Result<u8, CliError> {
    if args.runs == 0 {
        return Err(CliError::Config("--runs must be >= 1".into()));
    }
    let threads = threads_from_env()?;
    let sc = parse_scenario(&args.scenario)?;
    let (qs, rs) = if args.sweep || args.q.is_some() || args.r.is_some() {
        (
            grid_values("q", args.q.as_deref().unwrap_or(&DEFAULT_Q_GRID))?,
            grid_values("r", args.r.as_deref().unwrap_or(&DEFAULT_R_GRID))?,
        )
    } else {
        (vec![sc.noise.q[(0, 0)]], vec![sc.noise.r[(0, 0)]])
    };
    let algos: Vec<Algo> = match args.algo {
        None => vec![sc.sim.algo],
        Some(AlgoChoice::Dcmu) => vec![Algo::Dcmu],
        Some(AlgoChoice::Baseline) => vec![Algo::Baseline],
        Some(AlgoChoice::Both) => vec![Algo::Dcmu, Algo::Baseline],
    };
    create_out_dir(&args.out)?;

    let ratios_path = args.out.join("ratios.csv");
    let runs_path = args.out.join("runs.csv");
    let mut ratios = csv::Writer::from_path(&ratios_path).map_err(csv_err(&ratios_path))?;
    let mut runs = csv::Writer::from_path(&runs_path).map_err(csv_err(&runs_path))?;
    ratios
        .write_record(["Q", "R", "algo", "runs", "successes", "ratio"])
        .map_err(csv_err(&ratios_path))?;
    runs.write_record(["Q", "R", "algo", "seed", "success", "min_lambda2_true", "collision_steps", "aborted"])
        .map_err(csv_err(&runs_path))?;

    let mut cells = Vec::new();
    for &q in &qs {
        for &r in &rs {
            for &algo in &algos {
                let cell = sc.with_noise(q, r).with_algo(algo);
                let mc = monte_carlo(&cell, args.runs, args.seed_base, threads)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let summary = CellSummary {
                    q,
                    r,
                    algo: algo.name().to_string(),
                    runs: mc.runs.len(),
                    successes: mc.successes(),
                    ratio: mc.ratio(),
                };
                ratios
                    .write_record([
                        fmt_num(q),
                        fmt_num(r),
                        summary.algo.clone(),
                        summary.runs.to_string(),
                        summary.successes.to_string(),
                        fmt_num(summary.ratio),
                    ])
                    .map_err(csv_err(&ratios_path))?;
                for run in &mc.runs {
                    runs.write_record([
                        fmt_num(q),
                        fmt_num(r),
                        summary.algo.clone(),
                        run.seed.to_string(),
                        run.success.to_string(),
                        fmt_num(run.min_lambda2_true),
                        run.collision_steps.to_string(),
                        run.aborted.clone().unwrap_or_default(),
                    ])
                    .map_err(csv_err(&runs_path))?;
                }
                println!(
                    "Q={q} R={r} {}: {}/{} ratio {:.3}",
                    summary.algo, summary.successes, summary.runs, summary.ratio
                );
                cells.push(summary);
            }
        }
    }
    ratios.flush().map_err(io_err(&ratios_path))?;
    runs.flush().map_err(io_err(&runs_path))?;

    let report = MonteCarloReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_hash: scenario_hash(&sc),
        seed_base: args.seed_base,
        runs_per_cell: args.runs,
        cell: cells,
    };
    let summary_path = args.out.join("summary.toml");
    write_file(&summary_path, &toml::to_string(&report).expect("summary serializes"))?;
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8, CliError> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be >= 1".into()));
    }
    let report = run_gradcheck(args.trials, args.seed, &GraphParams::default());
    let ok = report.max_rel_error < GRADCHECK_TOL;
    println!(
        "gradcheck: {} trials ({} draws, {} nonzero gradients), max relative error {:.3e} (tol {:.0e}) {}",
        report.trials,
        report.draws,
        report.nonzero,
        report.max_rel_error,
        GRADCHECK_TOL,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { EXIT_OK } else { EXIT_METRIC })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_nine_significant_digits() {
        assert_eq!(fmt_num(0.0), "0.00000000e0");
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_num(-120.0), "-1.20000000e2");
    }

    #[test]
    fn header_lists_robot_columns() {
        let h = steps_header(2);
        assert_eq!(h.len(), 7 + 8);
        assert_eq!(h[7], "x_true_0");
        assert_eq!(h[14], "y_nom_1");
    }

    #[test]
    fn grid_values_are_sorted_and_checked() {
        assert_eq!(grid_values("q", &[0.02, 0.0, 0.02]).unwrap(), vec![0.0, 0.02]);
        assert!(grid_values("r", &[]).is_err());
        assert!(grid_values("r", &[-1.0]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dcmu", "bogus"]), EXIT_ERROR);
        assert_eq!(run(["dcmu", "gradcheck", "--trials", "0"]), EXIT_ERROR);
    }
}
