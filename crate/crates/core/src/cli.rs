//! Batch front end behind the `byzsim` binary.
//!
//! Every subcommand reads an experiment file (see [`crate::config`]), writes
//! CSV reports plus a `*.meta.toml` sidecar echoing the effective config into
//! `--out`, and prints a summary table. Every output file starts with
//! `# config_hash=<sha256>`; an existing file with a different hash is only
//! replaced under `--force`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{read_config_hash, run_training, write_trace_csv, TraceMeta, TrainError};
use crate::harness::robustness::{robustness_monte_carlo_with_draws, RobustnessReport, RobustnessScenario};
use crate::harness::{bench_aggregators, lr_sweep, table_csv};
use crate::meta::MetaSpec;
use crate::problems::verify_constants;
use crate::AggregatorSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "byzsim", version, about = "Byzantine-robust distributed training simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write the per-round trace.
    Train(RunArgs),
    /// Monte-Carlo robustness ratios against their bounds.
    Robustness(RunArgs),
    /// Learning-rate sweep of several estimators.
    Sweep(RunArgs),
    /// Aggregator wall-clock scaling in the number of inputs.
    Bench(RunArgs),
    /// Probe the declared problem constants.
    VerifyConstants(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Replaces the top-level `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-path assignment applied to the config, e.g. `training.eta=0.01`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replace outputs written under a different config.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path} was written by a different config (hash {existing}); pass --force to replace it")]
    Overwrite { path: PathBuf, existing: String },
    #[error(transparent)]
    Runtime(#[from] crate::Error),
    #[error(transparent)]
    Training(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Overwrite { .. } => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Training(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its printed summary.
pub fn execute(command: &Command) -> CliResult<String> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Robustness(a) => cmd_robustness(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::VerifyConstants(a) => cmd_verify_constants(a),
    }
}

fn load(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(ExperimentConfig::load(&args.config, &overrides)?)
}

/// Pending output files, checked together before anything is written.
struct Outputs<'a> {
    args: &'a RunArgs,
    hash: String,
    files: Vec<(PathBuf, String)>,
}

impl<'a> Outputs<'a> {
    fn new(args: &'a RunArgs, config: &ExperimentConfig) -> Self {
        Self {
            args,
            hash: config.hash(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((self.args.out.join(name), contents));
    }

    fn sidecar<S: Serialize>(&mut self, command: &str, config: &ExperimentConfig, summary: &S) {
        #[derive(Serialize)]
        struct Sidecar<'s, S> {
            command: &'s str,
            config_hash: &'s str,
            summary: &'s S,
            config: &'s ExperimentConfig,
        }
        let body = toml::to_string(&Sidecar {
            command,
            config_hash: &self.hash,
            summary,
            config,
        })
        .expect("sidecar serializes to TOML");
        let text = format!("# config_hash={}\n{body}", self.hash);
        self.add(&format!("{command}.meta.toml"), text);
    }

    fn commit(self) -> CliResult<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        if !self.args.force {
            for (path, _) in &self.files {
                if path.exists() {
                    let existing = read_config_hash(path).map_err(io(path))?.unwrap_or_default();
                    if existing != self.hash {
                        return Err(CliError::Overwrite {
                            path: path.clone(),
                            existing,
                        });
                    }
                }
            }
        }
        std::fs::create_dir_all(&self.args.out).map_err(io(&self.args.out))?;
        let mut written = Vec::new();
        for (path, contents) in self.files {
            std::fs::write(&path, contents).map_err(io(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn written_lines(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("wrote {}\n", p.display())).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    initial_excess_loss: f64,
    final_excess_loss: f64,
    completed_rounds: usize,
    trace: TraceMeta,
}

/// Trains once; writes `trace.csv` and `train.meta.toml`.
pub fn cmd_train(args: &RunArgs) -> CliResult<String> {
    let config = load(args)?;
    let problem = Arc::new(config.build_problem()?);
    let train = config.train_config(problem)?;
    let (trace, failure) = match run_training(&train) {
        Ok(trace) => (trace, None),
        Err(e) => ((*e.trace).clone(), Some(e)),
    };
    let mut csv = Vec::new();
    let mut outputs = Outputs::new(args, &config);
    write_trace_csv(&trace, &outputs.hash, &mut csv).expect("in-memory write");
    outputs.add("trace.csv", String::from_utf8(csv).expect("utf-8 csv"));
    let summary = TrainSummary {
        initial_excess_loss: trace.rows.first().map_or(f64::NAN, |r| r.excess_loss),
        final_excess_loss: trace.final_excess_loss().unwrap_or(f64::NAN),
        completed_rounds: trace.len(),
        trace: trace.meta.clone(),
    };
    outputs.sidecar("train", &config, &summary);
    let written = outputs.commit()?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let mut out = String::new();
    let m = &summary.trace;
    writeln!(out, "problem      {} (d = {}, m = {})", m.problem, m.dimension, m.workers).unwrap();
    writeln!(out, "byzantine    {:?} under {}", m.byzantine, m.attack).unwrap();
    writeln!(out, "aggregation  {}", m.aggregation).unwrap();
    writeln!(out, "estimator    {} eta = {} T = {}", m.estimator, m.eta, m.rounds).unwrap();
    writeln!(out, "Delta_1      {:.6e}", summary.initial_excess_loss).unwrap();
    writeln!(out, "Delta_T      {:.6e}", summary.final_excess_loss).unwrap();
    out.push_str(&written_lines(&written));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct RobustnessSummary {
    runs: usize,
    checked: usize,
    failed: usize,
}

const ROBUSTNESS_HEADER: [&str; 16] = [
    "aggregation",
    "adversary",
    "delta",
    "m",
    "d",
    "replications",
    "rho_sq",
    "rho_sq_empirical",
    "rho_check",
    "mean_sq_error",
    "se",
    "ratio",
    "ratio_se",
    "bound",
    "worst_radius",
    "pass",
];

fn robustness_row(r: &RobustnessReport) -> Vec<String> {
    vec![
        r.aggregation.clone(),
        r.adversary.name().to_string(),
        r.delta.to_string(),
        r.m.to_string(),
        r.d.to_string(),
        r.replications.to_string(),
        r.rho_sq.to_string(),
        r.rho_sq_empirical.to_string(),
        r.rho_check.to_string(),
        r.mean_sq_error.to_string(),
        r.se.to_string(),
        r.ratio.to_string(),
        r.ratio_se.to_string(),
        opt(r.bound),
        opt(r.worst_radius),
        r.pass.map_or_else(|| "-".to_string(), |p| p.to_string()),
    ]
}

/// Every `(delta, rule, meta, adversary)` combination of `[robustness]`;
/// writes `robustness.csv`.
pub fn cmd_robustness(args: &RunArgs) -> CliResult<String> {
    let config = load(args)?;
    let section = config.robustness.as_ref().ok_or(ConfigError::MissingSection("robustness"))?;
    let mut reports = Vec::new();
    for &delta in &section.deltas {
        for &rule in &section.rules {
            for &meta in &section.metas {
                let aggregation = MetaSpec::new(meta, AggregatorSpec::new(rule, delta));
                for &adversary in &section.adversaries {
                    let mut scenario = RobustnessScenario::new(
                        section.m,
                        delta,
                        section.d,
                        adversary,
                        section.replications,
                        config.seed,
                    );
                    scenario.sigma = section.sigma;
                    scenario.spread = section.spread;
                    reports.push(robustness_monte_carlo_with_draws(&scenario, &aggregation, section.rho_draws)?);
                }
            }
        }
    }
    let rows: Vec<Vec<String>> = reports.iter().map(robustness_row).collect();
    let mut outputs = Outputs::new(args, &config);
    outputs.add("robustness.csv", table_csv(&outputs.hash, &ROBUSTNESS_HEADER, &rows));
    let summary = RobustnessSummary {
        runs: reports.len(),
        checked: reports.iter().filter(|r| r.pass.is_some()).count(),
        failed: reports.iter().filter(|r| r.pass == Some(false)).count(),
    };
    outputs.sidecar("robustness", &config, &summary);
    let written = outputs.commit()?;
    let mut out = format!(
        "{:<22} {:<13} {:>5} {:>12} {:>12} {:>6}\n",
        "aggregation", "adversary", "delta", "ratio", "bound", "result"
    );
    for r in &reports {
        let verdict = match r.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "-",
        };
        writeln!(
            out,
            "{:<22} {:<13} {:>5} {:>12.4e} {:>12} {:>6}",
            r.aggregation,
            r.adversary.name(),
            r.delta,
            r.ratio,
            r.bound.map_or_else(|| "-".to_string(), |b| format!("{b:.4e}")),
            verdict
        )
        .unwrap();
    }
    writeln!(out, "{} of {} bounded runs failed", summary.failed, summary.checked).unwrap();
    out.push_str(&written_lines(&written));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    seeds: Vec<u64>,
    widths: Vec<crate::harness::sweep::IntervalWidth>,
}

/// Learning-rate sweep; writes `sweep.csv` (one row per estimator and eta)
/// and `sweep_widths.csv`.
pub fn cmd_sweep(args: &RunArgs) -> CliResult<String> {
    let config = load(args)?;
    let section = config.sweep.as_ref().ok_or(ConfigError::MissingSection("sweep"))?;
    let problem = Arc::new(config.build_problem()?);
    let mut template = config.train_config(problem)?;
    template.theory_mode = false;
    let estimators: Vec<_> = section.estimators.iter().map(|e| e.to_config()).collect();
    let seeds = config.sweep_seeds();
    let report = lr_sweep(&template, &estimators, &section.eta_grid, &seeds)?;
    let mut outputs = Outputs::new(args, &config);
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.estimator.clone(),
                p.eta.to_string(),
                p.initial_loss.to_string(),
                p.final_loss.to_string(),
                p.final_loss_se.to_string(),
                p.diverged.to_string(),
            ]
        })
        .collect();
    let header = ["estimator", "eta", "initial_loss", "final_loss", "final_loss_se", "diverged"];
    outputs.add("sweep.csv", table_csv(&outputs.hash, &header, &rows));
    let width_rows: Vec<Vec<String>> = report
        .widths
        .iter()
        .map(|w| {
            vec![
                w.estimator.clone(),
                w.best_eta.to_string(),
                w.eta_low.to_string(),
                w.eta_high.to_string(),
                w.decades.to_string(),
            ]
        })
        .collect();
    let width_header = ["estimator", "best_eta", "eta_low", "eta_high", "decades"];
    outputs.add("sweep_widths.csv", table_csv(&outputs.hash, &width_header, &width_rows));
    let summary = SweepSummary {
        seeds: seeds.clone(),
        widths: report.widths.clone(),
    };
    outputs.sidecar("sweep", &config, &summary);
    let written = outputs.commit()?;
    let mut out = format!("{:<32} {:>10} {:>14}\n", "estimator", "eta", "final Delta_T");
    for p in &report.points {
        writeln!(out, "{:<32} {:>10.3e} {:>14.6e}", p.estimator, p.eta, p.final_loss).unwrap();
    }
    for w in &report.widths {
        writeln!(
            out,
            "good interval of {}: [{:.3e}, {:.3e}] = {:.2} decades",
            w.estimator, w.eta_low, w.eta_high, w.decades
        )
        .unwrap();
    }
    out.push_str(&written_lines(&written));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct BenchSummary {
    exponents: Vec<(String, f64)>,
}

/// Aggregator timings; writes `bench.csv`.
pub fn cmd_bench(args: &RunArgs) -> CliResult<String> {
    let config = load(args)?;
    let section = config.bench.as_ref().ok_or(ConfigError::MissingSection("bench"))?;
    let report = bench_aggregators(&section.methods, &section.m_grid, section.d, section.repetitions, config.seed)?;
    let mut outputs = Outputs::new(args, &config);
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.name().to_string(),
                r.m.to_string(),
                report.d.to_string(),
                r.median_ns.to_string(),
                r.output_count.to_string(),
            ]
        })
        .collect();
    outputs.add(
        "bench.csv",
        table_csv(&outputs.hash, &["method", "m", "d", "median_ns", "output_count"], &rows),
    );
    let summary = BenchSummary {
        exponents: report.exponents.iter().map(|(m, e)| (m.name().to_string(), *e)).collect(),
    };
    outputs.sidecar("bench", &config, &summary);
    let written = outputs.commit()?;
    let mut out = format!("{:<22} {:>6} {:>14}\n", "method", "m", "median ns");
    for r in &report.rows {
        writeln!(out, "{:<22} {:>6} {:>14}", r.method.name(), r.m, r.median_ns).unwrap();
    }
    for (name, e) in &summary.exponents {
        writeln!(out, "exponent in m of {name}: {e:.3}").unwrap();
    }
    out.push_str(&written_lines(&written));
    Ok(out)
}

/// Probes the declared constants of the configured problem; writes
/// `constants.meta.toml`. Violations are a runtime error.
pub fn cmd_verify_constants(args: &RunArgs) -> CliResult<String> {
    let config = load(args)?;
    let problem = config.build_problem()?;
    let report = verify_constants(&problem, config.verify.probe_points, config.verify.samples);
    let mut outputs = Outputs::new(args, &config);
    outputs.sidecar("constants", &config, &report);
    let written = outputs.commit()?;
    let c = &report.declared;
    let mut out = format!("{:<8} {:>14} {:>14}\n", "constant", "declared", "observed/decl");
    writeln!(out, "{:<8} {:>14.6} {:>14.4}", "L", c.lipschitz, report.lipschitz_ratio).unwrap();
    writeln!(out, "{:<8} {:>14.6} {:>14.4}", "sigma^2", c.sigma * c.sigma, report.noise_ratio).unwrap();
    writeln!(out, "{:<8} {:>14.6} {:>14.4}", "sigma_L^2", c.sigma_l * c.sigma_l, report.sigma_l_ratio).unwrap();
    writeln!(out, "{:<8} {:>14.6} {:>14.4}", "xi^2", c.xi * c.xi, report.xi_ratio).unwrap();
    writeln!(out, "{:<8} {:>14.6}", "D", c.diameter).unwrap();
    out.push_str(&written_lines(&written));
    if !report.violations.is_empty() {
        for v in &report.violations {
            writeln!(out, "violation: {v}").unwrap();
        }
        print!("{out}");
        return Err(crate::Error::ConstantsViolated(report.violations.join("; ")).into());
    }
    Ok(out)
}
