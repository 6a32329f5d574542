//! Run configuration: an optional JSON file merged with command-line flags,
//! flags taking precedence.

use std::path::{Path, PathBuf};

use asf_core::data::XKind;
use asf_core::pipeline::{EstimatorKind, EstimatorOptions};
use asf_core::simlab::{DgpName, DgpSpec, McCell};
use asf_core::trimming::TrimmingSet;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Sample size used when a DGP is named on the command line without `--n`.
pub const DEFAULT_DGP_N: usize = 1000;
/// Replications per Monte Carlo cell when neither file nor flags say.
pub const DEFAULT_REPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Estimate,
    Simulate,
    Mc,
    Diagnose,
}

/// Contents of a `--config` JSON file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub dgp: Option<DgpSpec>,
    pub estimator: Option<EstimatorKind>,
    pub x0: Option<Vec<f64>>,
    pub trim: Option<TrimmingSet>,
    pub bandwidth: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub x_kind: Option<XKind>,
    /// Remaining estimator tuning: degree, kernel, first-stage model, basis,
    /// nonparametric bandwidths and grid size.
    pub options: Option<EstimatorOptions>,
    /// Explicit Monte Carlo cells for `mc`.
    pub cells: Option<Vec<McCell>>,
    /// Flat CSV copy of the Monte Carlo report.
    pub csv: Option<PathBuf>,
    pub timing: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config '{}': {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config '{}': {e}", path.display())))
    }
}

fn parse_x0(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| p.parse::<f64>().map_err(|e| format!("'{p}': {e}"))).collect()
}

fn parse_trim(s: &str) -> Result<TrimmingSet, String> {
    if s.eq_ignore_ascii_case("full") || s.eq_ignore_ascii_case("none") {
        return Ok(TrimmingSet::Full);
    }
    let parts = parse_x0(s)?;
    match parts.as_slice() {
        [lo, hi] => Ok(TrimmingSet::QuantileBox { lo: *lo, hi: *hi }),
        _ => Err("expected 'qlo,qhi' or 'full'".into()),
    }
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: asf_core::AsfError| e.to_string())
}

fn parse_dgp(s: &str) -> Result<DgpName, String> {
    s.parse().map_err(|e: asf_core::AsfError| e.to_string())
}

fn parse_x_kind(s: &str) -> Result<XKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "continuous" => Ok(XKind::Continuous),
        "discrete" => Ok(XKind::Discrete),
        _ => Err(format!("unknown x kind '{s}' (continuous or discrete)")),
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Flags {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV dataset with columns y, x, z*, w*.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reference design to simulate instead of reading data (DGP-C, DGP-D, DGP-P, DGP-EXO, CONSTANT).
    #[arg(long, value_parser = parse_dgp)]
    pub dgp: Option<DgpName>,
    /// Sample size of the simulated design.
    #[arg(long)]
    pub n: Option<usize>,
    /// semiparametric-continuous, semiparametric-discrete, parametric, nonparametric or naive.
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorKind>,
    /// Comma-separated evaluation points.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Quantile trimming box 'qlo,qhi', or 'full'.
    #[arg(long, value_parser = parse_trim)]
    pub trim: Option<TrimmingSet>,
    /// Second-stage bandwidth.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo replications per cell.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when absent. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override the automatic discreteness check of x.
    #[arg(long, value_parser = parse_x_kind)]
    pub x_kind: Option<XKind>,
    /// Also write the Monte Carlo summary as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Add a metadata block with wall time and thread count to the report.
    #[arg(long)]
    pub timing: bool,
}

/// Where observations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Data(PathBuf),
    Dgp(DgpSpec),
    /// Only valid for `mc` with explicit cells.
    Cells,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub source: Source,
    pub estimator: Option<EstimatorKind>,
    pub x0: Option<Vec<f64>>,
    pub options: EstimatorOptions,
    pub x_kind: Option<XKind>,
    pub seed: u64,
    /// Replications per cell; `None` keeps explicit cells as written and
    /// otherwise means [`DEFAULT_REPS`].
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub cells: Option<Vec<McCell>>,
    pub csv: Option<PathBuf>,
    pub timing: bool,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Merges `file` and `flags`; a flag always wins over the file.
pub fn resolve(command: Command, file: FileConfig, flags: &Flags) -> Result<RunConfig, CliError> {
    let seed = flags.seed.or(file.seed);
    let mut dgp = file.dgp;
    if let Some(name) = flags.dgp {
        dgp = Some(match dgp {
            Some(spec) => DgpSpec { name, ..spec },
            None => DgpSpec::new(name, DEFAULT_DGP_N, 0),
        });
    }
    if let Some(n) = flags.n {
        dgp.as_mut().ok_or_else(|| config_err("--n needs a DGP (--dgp or config 'dgp')"))?.n = n;
    }
    if let (Some(spec), Some(s)) = (dgp.as_mut(), seed) {
        spec.seed = s;
    }
    let data = flags.data.clone().or(file.data);
    let cells = file.cells;
    let source = match (command, data, dgp) {
        (_, Some(_), Some(_)) => return Err(config_err("give either a data file or a DGP, not both")),
        (Command::Simulate | Command::Mc, Some(_), None) => return Err(config_err("this command simulates data; use --dgp instead of --data")),
        (Command::Mc, None, None) if cells.is_some() => Source::Cells,
        (_, None, None) => return Err(config_err("no input: give --data or --dgp")),
        (_, Some(path), None) => Source::Data(path),
        (_, None, Some(spec)) => {
            spec.validate().map_err(|e| config_err(e.to_string()))?;
            Source::Dgp(spec)
        }
    };

    let mut options = file.options.unwrap_or_default();
    if let Some(trim) = flags.trim.clone().or(file.trim) {
        options.trim = trim;
    }
    options.trim.validate().map_err(|e| config_err(e.to_string()))?;
    if let Some(b) = flags.bandwidth.or(file.bandwidth) {
        options.bandwidth = Some(b);
    }
    if let Some(b) = options.bandwidth {
        if !(b > 0.0 && b.is_finite()) {
            return Err(config_err(format!("bandwidth must be positive, got {b}")));
        }
    }

    let x0 = flags.x0.clone().or(file.x0);
    if let Some(points) = &x0 {
        if points.is_empty() {
            return Err(config_err("x0 list is empty"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(config_err("x0 values must be finite"));
        }
    }
    if matches!(command, Command::Estimate | Command::Diagnose) && x0.is_none() && matches!(source, Source::Data(_)) {
        return Err(config_err("--x0 is required with a data file"));
    }

    let reps = flags.reps.or(file.reps);
    if let Some(r) = reps.filter(|&r| r < 2) {
        return Err(config_err(format!("need at least 2 replications, got {r}")));
    }
    let threads = flags.threads.or(file.threads);
    if threads == Some(0) {
        return Err(config_err("--threads must be at least 1"));
    }
    Ok(RunConfig {
        command,
        source,
        estimator: flags.estimator.or(file.estimator),
        x0,
        options,
        x_kind: flags.x_kind.or(file.x_kind),
        seed: seed.unwrap_or(0),
        reps,
        out: flags.out.clone().or(file.out),
        threads,
        cells,
        csv: flags.csv.clone().or(file.csv),
        timing: flags.timing || file.timing.unwrap_or(false),
    })
}
