//! Subcommand execution and report emission.

use std::ffi::OsString;
use std::path::Path;
use std::time::Instant;

use asf_core::data::{Dataset, XKind};
use asf_core::estimate::AsfEstimate;
use asf_core::nonparametric::{estimate_conditional_cdf_with, first_stage_bandwidth, small_ball_diagnostic, SmallBallRow};
use asf_core::pipeline::{self, EstimatorKind};
use asf_core::simlab::{rate_check, run_monte_carlo, DgpSpec, McCell, McConfig, McReport, RateCheck};
use asf_core::trimming::TrimmingSet;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{resolve, Command, FileConfig, Flags, RunConfig, Source, DEFAULT_REPS};
use crate::error::CliError;
use crate::ingest::{ingest_csv, write_csv};

/// Version tag of every JSON report.
pub const SCHEMA_VERSION: &str = "1";
/// Radii of the small-ball table written by `diagnose`.
pub const SMALL_BALL_RADII: [f64; 6] = [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125];

#[derive(Debug, Parser)]
#[command(name = "asf", version, about = "Average structural function estimation with a proxy-based control variable")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Estimate the ASF at the requested points.
    Estimate(Flags),
    /// Write a simulated dataset as CSV.
    Simulate(Flags),
    /// Run a Monte Carlo study.
    Mc(Flags),
    /// Common-support, first-stage and small-ball diagnostics.
    Diagnose(Flags),
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::Estimate(f) => (Command::Estimate, f),
            Sub::Simulate(f) => (Command::Simulate, f),
            Sub::Mc(f) => (Command::Mc, f),
            Sub::Diagnose(f) => (Command::Diagnose, f),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, flags) = cli.command.split();
    match run(command, &flags) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("asf: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Serialize)]
struct Metadata {
    wall_seconds: f64,
    threads: usize,
}

#[derive(Debug, Serialize)]
struct Envelope<T: Serialize> {
    schema_version: &'static str,
    command: Command,
    #[serde(flatten)]
    body: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<Metadata>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SourceInfo {
    Data { path: String, rows_read: usize, rows_dropped: usize },
    Dgp(DgpSpec),
}

#[derive(Debug, Serialize)]
struct EstimateBody {
    estimator: EstimatorKind,
    source: SourceInfo,
    n: usize,
    x_kind: XKind,
    estimates: Vec<AsfEstimate>,
}

#[derive(Debug, Serialize)]
struct McBody {
    #[serde(flatten)]
    report: McReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_checks: Option<Vec<RateCheck>>,
}

#[derive(Debug, Serialize)]
struct FirstStageSummary {
    beta_hat: Vec<f64>,
    loglik: f64,
    iterations: usize,
    gradient_norm: f64,
    at_scale_floor: bool,
}

#[derive(Debug, Serialize)]
struct SupportRow {
    x0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_trimmed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_effective_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_fits: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct DiagnoseBody {
    source: SourceInfo,
    n: usize,
    x_kind: XKind,
    estimator: EstimatorKind,
    first_stage: FirstStageSummary,
    support: Vec<SupportRow>,
    small_ball_bandwidth: f64,
    small_ball: Vec<SmallBallRow>,
}

enum Output {
    Json(String),
    Csv(Vec<u8>),
}

fn to_json<T: Serialize>(command: Command, body: T, metadata: Option<Metadata>) -> Result<Output, CliError> {
    let env = Envelope { schema_version: SCHEMA_VERSION, command, body, metadata };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    Ok(Output::Json(text))
}

fn load(cfg: &RunConfig) -> Result<(Dataset, SourceInfo), CliError> {
    let (mut data, info) = match &cfg.source {
        Source::Data(path) => {
            let got = ingest_csv(path, cfg.x_kind)?;
            if got.rows_dropped > 0 {
                eprintln!("asf: dropped {} of {} rows with missing values", got.rows_dropped, got.rows_read);
            }
            let info = SourceInfo::Data { path: path.display().to_string(), rows_read: got.rows_read, rows_dropped: got.rows_dropped };
            (got.data, info)
        }
        Source::Dgp(spec) => (spec.generate_seeded()?, SourceInfo::Dgp(spec.clone())),
        Source::Cells => return Err(CliError::Config("this command needs --data or --dgp".into())),
    };
    if let Some(kind) = cfg.x_kind {
        data.x_kind = kind;
    }
    Ok((data, info))
}

fn default_x0(cfg: &RunConfig) -> Vec<f64> {
    match (&cfg.x0, &cfg.source) {
        (Some(points), _) => points.clone(),
        (None, Source::Dgp(spec)) => vec![spec.name.default_x0()],
        (None, _) => Vec::new(),
    }
}

fn estimator_for(cfg: &RunConfig, data: &Dataset) -> Result<EstimatorKind, CliError> {
    let kind = cfg.estimator.unwrap_or(EstimatorKind::semiparametric_for(data.x_kind));
    match (kind, data.x_kind) {
        (EstimatorKind::SemiparametricContinuous, XKind::Discrete) | (EstimatorKind::SemiparametricDiscrete, XKind::Continuous) => {
            Err(CliError::Config(format!("estimator {} does not match a {:?} x", kind.label(), data.x_kind).to_lowercase()))
        }
        _ => Ok(kind),
    }
}

fn estimate(cfg: &RunConfig) -> Result<EstimateBody, CliError> {
    let (data, source) = load(cfg)?;
    let kind = estimator_for(cfg, &data)?;
    let estimates = pipeline::estimate(kind, &data, &default_x0(cfg), &cfg.options)?;
    Ok(EstimateBody { estimator: kind, source, n: data.n(), x_kind: data.x_kind, estimates })
}

fn simulate(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let (data, _) = load(cfg)?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(buf)
}

fn mc_config(cfg: &RunConfig) -> Result<McConfig, CliError> {
    let mut cells = match (&cfg.cells, &cfg.source) {
        (Some(cells), _) => cells.clone(),
        (None, Source::Dgp(spec)) => {
            let population_box = match cfg.options.trim {
                TrimmingSet::Full => None,
                TrimmingSet::QuantileBox { lo, hi } => Some([lo, hi]),
                TrimmingSet::Rectangle { .. } => return Err(CliError::Config("mc trims on population quantiles; use --trim qlo,qhi or full".into())),
            };
            let estimator = cfg.estimator.unwrap_or(EstimatorKind::semiparametric_for(spec.name.x_kind()));
            let x0 = cfg.x0.clone().unwrap_or_else(|| vec![spec.name.default_x0()]);
            let mut cell = McCell::new(spec.clone(), estimator, x0, DEFAULT_REPS);
            cell.population_box = population_box;
            cell.options = cfg.options.clone();
            vec![cell]
        }
        _ => return Err(CliError::Config("mc needs --dgp or 'cells' in the config file".into())),
    };
    if let Some(r) = cfg.reps {
        for c in &mut cells {
            c.replications = r;
        }
    }
    Ok(McConfig { master_seed: cfg.seed, cells, record_timing: cfg.timing })
}

fn mc(cfg: &RunConfig) -> Result<(McBody, Option<Vec<u8>>), CliError> {
    let report = run_monte_carlo(&mc_config(cfg)?)?;
    let rate_checks = rate_check(&report.results).ok();
    let csv = match &cfg.csv {
        Some(_) => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            for r in &report.results {
                wtr.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
            }
            Some(wtr.into_inner().map_err(|e| CliError::Output(e.to_string()))?)
        }
        None => None,
    };
    Ok((McBody { report, rate_checks }, csv))
}

fn diagnose(cfg: &RunConfig) -> Result<DiagnoseBody, CliError> {
    let (data, source) = load(cfg)?;
    let kind = EstimatorKind::semiparametric_for(data.x_kind);
    let fs = cfg.options.first_stage(&data)?;
    let support = default_x0(cfg)
        .into_iter()
        .map(|x0| match pipeline::estimate(kind, &data, &[x0], &cfg.options) {
            Ok(mut est) => {
                let d = est.remove(0).diagnostics;
                SupportRow {
                    x0,
                    n_trimmed: Some(d.n_trimmed),
                    support_coverage: d.support_coverage,
                    mean_effective_n: d.mean_effective_n,
                    failed_fits: Some(d.failed_fits),
                    warnings: d.warnings,
                    error: None,
                }
            }
            Err(e) => SupportRow {
                x0,
                n_trimmed: None,
                support_coverage: None,
                mean_effective_n: None,
                failed_fits: None,
                warnings: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    let np = cfg.options.nonparametric_config();
    let b_fs = np.bandwidth_fs.unwrap_or_else(|| first_stage_bandwidth(&data, &np.kernel));
    let cdfs = estimate_conditional_cdf_with(&data, fs.model.proxy_column, b_fs, np.grid_size, &np.kernel)?;
    let small_ball = small_ball_diagnostic(&cdfs, &SMALL_BALL_RADII)?;
    Ok(DiagnoseBody {
        source,
        n: data.n(),
        x_kind: data.x_kind,
        estimator: kind,
        first_stage: FirstStageSummary {
            beta_hat: fs.beta_hat.clone(),
            loglik: fs.loglik,
            iterations: fs.iterations,
            gradient_norm: fs.gradient_norm,
            at_scale_floor: fs.at_scale_floor,
        },
        support,
        small_ball_bandwidth: b_fs,
        small_ball,
    })
}

fn execute(cfg: &RunConfig, started: Instant) -> Result<(Output, Option<Vec<u8>>), CliError> {
    let metadata = || cfg.timing.then(|| Metadata { wall_seconds: started.elapsed().as_secs_f64(), threads: rayon::current_num_threads() });
    Ok(match cfg.command {
        Command::Estimate => (to_json(cfg.command, estimate(cfg)?, metadata())?, None),
        Command::Simulate => (Output::Csv(simulate(cfg)?), None),
        Command::Mc => {
            let (body, csv) = mc(cfg)?;
            (to_json(cfg.command, body, metadata())?, csv)
        }
        Command::Diagnose => (to_json(cfg.command, diagnose(cfg)?, metadata())?, None),
    })
}

fn write(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Output(format!("cannot write '{}': {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| CliError::Output(e.to_string()))
        }
    }
}

/// Resolves the configuration and runs one subcommand.
pub fn run(command: Command, flags: &Flags) -> Result<(), CliError> {
    let started = Instant::now();
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = resolve(command, file, flags)?;
    let (output, csv) = match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| CliError::Config(e.to_string()))?;
            pool.install(|| execute(&cfg, started))?
        }
        None => execute(&cfg, started)?,
    };
    let bytes = match output {
        Output::Json(text) => text.into_bytes(),
        Output::Csv(bytes) => bytes,
    };
    write(cfg.out.as_deref(), &bytes)?;
    if let (Some(path), Some(csv)) = (&cfg.csv, csv) {
        write(Some(path), &csv)?;
    }
    Ok(())
}
