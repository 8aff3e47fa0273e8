//! Command-line front end: `simulate`, `fit` and `replicate`.
//!
//! Every JSON report carries a versioned envelope with the full argument
//! echo, the seed, the library version and the wall-clock time, so a run can
//! be repeated exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prevpair::data::StandardizationKind;
use prevpair::simulate::{gen_cohort, write_truth, ScenarioSpec, Setting};
use prevpair::variance::Method;
use prevpair::workflow::{run_fit, run_replicate, FitConfig, ReplicateConfig, ReplicateReport};
use prevpair::{ingest_csv, write_csv, CensoringModel, Error, IngestOptions, OnsetTransform};

pub const SCHEMA: u32 = 1;

/// Exit status for numerical failures (non-convergence, singular matrices).
pub const EXIT_NUMERICAL: i32 = 1;
/// Exit status for usage, configuration and IO errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "prevpair", version, about = "Onset-age Cox regression using prevalent cases")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated cohort.
    Simulate(SimulateArgs),
    /// Fit the nuisance models and the pairwise estimator.
    Fit(FitArgs),
    /// One model per candidate covariate with BH-adjusted one-sided tests.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingArg {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
    #[value(name = "C")]
    C,
    Genotypes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringArg {
    Cox,
    None,
}

impl From<CensoringArg> for CensoringModel {
    fn from(c: CensoringArg) -> Self {
        match c {
            CensoringArg::Cox => CensoringModel::Cox,
            CensoringArg::None => CensoringModel::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Boot1,
    Boot2,
    Boot3,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Boot1 => Method::Boot1,
            MethodArg::Boot2 => Method::Boot2,
            MethodArg::Boot3 => Method::Boot3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeArg {
    None,
    Minmax,
    Zscore,
}

impl StandardizeArg {
    fn kind(self) -> Option<StandardizationKind> {
        match self {
            StandardizeArg::None => None,
            StandardizeArg::Minmax => Some(StandardizationKind::MinMax),
            StandardizeArg::Zscore => Some(StandardizationKind::ZScore),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformArg {
    Identity,
    Log,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, ignore_case = true)]
    pub setting: SettingArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the latent ages of every scanned pool member.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Genotype scenario: number of candidate columns.
    #[arg(long, default_value_t = 31)]
    pub candidates: usize,
    /// Genotype scenario: leading candidates with a nonzero effect.
    #[arg(long, default_value_t = 11)]
    pub causal: usize,
    /// Genotype scenario: log hazard ratio per standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub effect: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Pairs per observation.
    #[arg(long, conflicts_with = "all_pairs", required_unless_present = "all_pairs")]
    pub kn: Option<usize>,
    /// Use every pair instead of a subsample.
    #[arg(long)]
    pub all_pairs: bool,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CensoringArg::Cox)]
    pub censoring: CensoringArg,
    #[arg(long, value_enum)]
    pub variance: Option<MethodArg>,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 100)]
    pub b: usize,
    #[arg(long)]
    pub ktilde: Option<usize>,
    #[arg(long, value_enum, default_value_t = StandardizeArg::None)]
    pub standardize: StandardizeArg,
    /// Transformation of the onset age in the post-onset death model.
    #[arg(long, value_enum, default_value_t = TransformArg::Identity)]
    pub onset_transform: TransformArg,
    /// Skip rows that break a record rule instead of failing.
    #[arg(long)]
    pub drop_invalid: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated candidate covariates.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub candidates: Vec<String>,
    /// Comma-separated adjustment covariates shared by every model.
    #[arg(long, value_delimiter = ',')]
    pub adjust: Vec<String>,
    #[arg(long)]
    pub kn: usize,
    #[arg(long = "B", default_value_t = 100)]
    pub b: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Boot3)]
    pub method: MethodArg,
    #[arg(long)]
    pub ktilde: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CensoringArg::Cox)]
    pub censoring: CensoringArg,
    #[arg(long, value_enum, default_value_t = StandardizeArg::Zscore)]
    pub standardize: StandardizeArg,
    /// Bootstrap replicates for the test-statistic correlation check.
    #[arg(long)]
    pub correlation_diag: Option<usize>,
    #[arg(long)]
    pub drop_invalid: bool,
    /// Per-candidate results (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Full JSON report (default: the CSV path with a `.json` extension).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Library(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Library(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    schema: u32,
    command: &'a str,
    version: &'a str,
    status: &'a str,
    config: &'a C,
    seed: u64,
    wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    invalid_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<R>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorReport>,
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_iterate: Option<Vec<f64>>,
}

impl ErrorReport {
    fn from_error(e: &Error) -> Self {
        match e {
            Error::NonConvergence {
                iterations,
                grad_norm,
                last_iterate,
                ..
            } => ErrorReport {
                message: e.to_string(),
                iterations: Some(*iterations),
                grad_norm: Some(*grad_norm),
                last_iterate: Some(last_iterate.clone()),
            },
            _ => ErrorReport {
                message: e.to_string(),
                iterations: None,
                grad_norm: None,
                last_iterate: None,
            },
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let io = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

fn output_error(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(source) => CliError::Output {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Library(other),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let spec = match args.setting {
        SettingArg::A => ScenarioSpec::setting(Setting::A, args.n, args.seed),
        SettingArg::B => ScenarioSpec::setting(Setting::B, args.n, args.seed),
        SettingArg::C => ScenarioSpec::setting(Setting::C, args.n, args.seed),
        SettingArg::Genotypes => {
            if args.causal > args.candidates {
                return Err(CliError::Usage("--causal cannot exceed --candidates".into()));
            }
            ScenarioSpec::genotypes(args.n, args.seed, args.candidates, args.causal, args.effect)
        }
    };
    let sim = gen_cohort(&spec)?;
    write_csv(&sim.cohort, &args.out).map_err(output_error(&args.out))?;
    if let Some(path) = &args.truth {
        let file = File::create(path).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        write_truth(&sim.truth, BufWriter::new(file)).map_err(output_error(path))?;
    }
    log::info!(
        "wrote {} subjects ({} pool draws) to {}",
        sim.cohort.len(),
        sim.truth.len(),
        args.out.display()
    );
    Ok(())
}

fn load(input: &Path, drop_invalid: bool) -> Result<prevpair::Cohort, CliError> {
    Ok(ingest_csv(input, IngestOptions { drop_invalid })?)
}

fn standardized(cohort: prevpair::Cohort, kind: Option<StandardizationKind>) -> Result<prevpair::Cohort, CliError> {
    Ok(match kind {
        None => cohort,
        Some(StandardizationKind::MinMax) => prevpair::minmax_standardize(&cohort)?,
        Some(StandardizationKind::ZScore) => prevpair::zscore_standardize(&cohort)?,
    })
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let cohort = standardized(load(&args.input, args.drop_invalid)?, args.standardize.kind())?;
    let mut config = FitConfig::new(if args.all_pairs { None } else { args.kn }, args.seed);
    config.censoring = args.censoring.into();
    config.onset_transform = match args.onset_transform {
        TransformArg::Identity => OnsetTransform::Identity,
        TransformArg::Log => OnsetTransform::Log,
    };
    config.variance = args.variance.map(Method::from);
    config.replicates = args.b;
    config.ktilde = args.ktilde;
    let outcome = run_fit(&cohort, &config);
    let envelope = |status, result, error| Envelope {
        schema: SCHEMA,
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        status,
        config: args,
        seed: args.seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        invalid_pairs: outcome.as_ref().ok().map(|r| r.pairwise.n_invalid),
        result,
        error,
    };
    match &outcome {
        Ok(report) => write_json(&args.out, &envelope("ok", Some(report), None)),
        Err(e) if e.is_numerical() => {
            write_json(&args.out, &envelope("error", None, Some(ErrorReport::from_error(e))))?;
            Err(outcome.unwrap_err().into())
        }
        Err(_) => Err(outcome.unwrap_err().into()),
    }
}

fn replicate_csv(report: &ReplicateReport, path: &Path) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Output {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "name",
        "estimate",
        "se",
        "z",
        "p_one_sided",
        "p_adjusted",
        "significant",
        "pl_estimate",
        "pl_se",
        "pl_p_one_sided",
        "pl_p_adjusted",
        "pl_significant",
        "invalid_pairs",
        "robust_mad",
    ])
    .map_err(io)?;
    let bit = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for c in &report.candidates {
        let (pw, pl) = (&c.pairwise, &c.partial_likelihood);
        w.write_record([
            c.name.clone(),
            pw.estimate.to_string(),
            pw.se.to_string(),
            pw.z.to_string(),
            pw.p_one_sided.to_string(),
            pw.p_adjusted.to_string(),
            bit(pw.significant),
            pl.estimate.to_string(),
            pl.se.to_string(),
            pl.p_one_sided.to_string(),
            pl.p_adjusted.to_string(),
            bit(pl.significant),
            c.n_invalid.to_string(),
            bit(c.robust_mad),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<ReplicateReport, CliError> {
    let start = Instant::now();
    let candidates: Vec<String> = args.candidates.iter().filter(|c| !c.is_empty()).cloned().collect();
    if candidates.is_empty() {
        return Err(CliError::Usage("at least one candidate covariate is required".into()));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage("--level must lie in (0, 1)".into()));
    }
    let cohort = load(&args.input, args.drop_invalid)?;
    let mut config = ReplicateConfig::new(candidates, args.adjust.clone(), args.kn, args.b, args.seed);
    config.method = args.method.into();
    config.ktilde = args.ktilde;
    config.level = args.level;
    config.censoring = args.censoring.into();
    config.standardize = args.standardize.kind();
    config.correlation_replicates = args.correlation_diag;
    let report = run_replicate(&cohort, &config)?;
    replicate_csv(&report, &args.out)?;
    let json = args.report.clone().unwrap_or_else(|| args.out.with_extension("json"));
    write_json(
        &json,
        &Envelope {
            schema: SCHEMA,
            command: "replicate",
            version: env!("CARGO_PKG_VERSION"),
            status: "ok",
            config: args,
            seed: args.seed,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            invalid_pairs: Some(report.candidates.iter().map(|c| c.n_invalid).max().unwrap_or(0)),
            result: Some(&report),
            error: None,
        },
    )?;
    Ok(report)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Replicate(a) => cmd_replicate(a).map(|_| ()),
    }
}
