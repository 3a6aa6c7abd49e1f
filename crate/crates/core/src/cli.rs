//! Command-line front end.
//!
//! Settings are resolved as: flag, then `--config` TOML file, then the
//! `EDR_PAV_SEED` environment variable (seed only), then built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::datagen::SimConfig;
use crate::error::{Error, Result};
use crate::experiments::{
    load_real_problem, parse_methods, run_real_data_with_invocation,
    run_simulation_study_with_invocation, DataFile, DesignSource, ExperimentReport, Method,
    RealDataConfig, RealDataMode, ReportFormat, StudyConfig,
};
use crate::grid::GridSpec;
use crate::pav::SelectionMode;

pub const SEED_ENV: &str = "EDR_PAV_SEED";

#[derive(Debug, Parser)]
#[command(name = "edr-pav", version, about = "Personalized ridge tuning with adaptive validation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulation study on random (or file-supplied) designs.
    Simulate(Options),
    /// In-sample evaluation on a data file.
    Fit(Options),
    /// Leave-one-out evaluation on a data file.
    Loo(Options),
    /// Simulation study with wall-clock timing.
    Bench(Options),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML file with default values for any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Samples per simulated problem.
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariates per simulated problem.
    #[arg(long)]
    pub p: Option<usize>,
    /// Simulation replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Signal-to-noise ratio Var(Xβ*)/Var(u).
    #[arg(long)]
    pub snr: Option<f64>,
    /// Base random seed (falls back to EDR_PAV_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of ridge tuning parameters.
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// log10 of the smallest ridge tuning parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub grid_min_log10: Option<f64>,
    /// log10 of the largest ridge tuning parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub grid_max_log10: Option<f64>,
    /// Fold count used for a bare `cv` entry in --methods.
    #[arg(long)]
    pub k_folds: Option<usize>,
    /// Comma-separated methods, e.g. pav,cv5,cv10.
    #[arg(long)]
    pub methods: Option<String>,
    /// Delimited data file (rows are samples).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column: first, last, a zero-based index, or a header name.
    #[arg(long)]
    pub response: Option<String>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads for replications and leave-one-out trials.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Draw one design mean per column instead of one per matrix.
    #[arg(long)]
    pub mu_per_column: bool,
    /// Evaluate the full admissible set instead of the early-exit scan.
    #[arg(long)]
    pub definition2_mode: bool,
}

/// Contents of a `--config` file. Keys mirror the long flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub reps: Option<usize>,
    pub snr: Option<f64>,
    pub seed: Option<u64>,
    pub grid_count: Option<usize>,
    pub grid_min_log10: Option<f64>,
    pub grid_max_log10: Option<f64>,
    pub k_folds: Option<usize>,
    pub methods: Option<String>,
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub threads: Option<usize>,
    pub mu_per_column: Option<bool>,
    pub definition2_mode: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub sim: SimConfig,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub data: Option<PathBuf>,
    pub response: String,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub threads: usize,
    pub mode: SelectionMode,
}

pub fn resolve(options: &Options, env_seed: Option<&str>) -> Result<Resolved> {
    let file = match &options.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let env_seed = env_seed
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={s:?} is not a seed")))
        })
        .transpose()?;
    let defaults = SimConfig::default();
    let grid = GridSpec {
        count: options.grid_count.or(file.grid_count).unwrap_or(defaults.grid.count),
        min_log10: options.grid_min_log10.or(file.grid_min_log10).unwrap_or(defaults.grid.min_log10),
        max_log10: options.grid_max_log10.or(file.grid_max_log10).unwrap_or(defaults.grid.max_log10),
    };
    let sim = SimConfig {
        n: options.n.or(file.n).unwrap_or(defaults.n),
        p: options.p.or(file.p).unwrap_or(defaults.p),
        snr: options.snr.or(file.snr).unwrap_or(defaults.snr),
        mu_per_column: options.mu_per_column || file.mu_per_column.unwrap_or(false),
        grid,
        seed: options.seed.or(file.seed).or(env_seed).unwrap_or(defaults.seed),
        ..defaults
    };
    sim.validate()?;

    let k_folds = options.k_folds.or(file.k_folds);
    let methods = match options.methods.clone().or(file.methods) {
        Some(list) => {
            let k = k_folds.unwrap_or(5);
            let expanded: Vec<String> = list
                .split(',')
                .map(|m| match m.trim() {
                    bare if bare.eq_ignore_ascii_case("cv") => format!("cv{k}"),
                    other => other.to_string(),
                })
                .collect();
            parse_methods(&expanded.join(","))?
        }
        None => match k_folds {
            Some(k) => vec![Method::Pav, format!("cv{k}").parse()?],
            None => StudyConfig::default().methods,
        },
    };
    let format = match options.format.clone().or(file.format) {
        Some(f) => f.parse()?,
        None => ReportFormat::Csv,
    };
    let threads = options.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(Error::InvalidConfig("--threads must be at least 1".into()));
    }
    let replications = options.reps.or(file.reps).unwrap_or(100);
    if replications == 0 {
        return Err(Error::InvalidConfig("--reps must be at least 1".into()));
    }
    Ok(Resolved {
        sim,
        replications,
        methods,
        data: options.data.clone().or(file.data),
        response: options.response.clone().or(file.response).unwrap_or_else(|| "last".into()),
        out: options.out.clone().or(file.out),
        format,
        threads,
        mode: if options.definition2_mode || file.definition2_mode.unwrap_or(false) {
            SelectionMode::Definition2
        } else {
            SelectionMode::Algorithm1
        },
    })
}

fn simulation(resolved: &Resolved, timing: bool, invocation: Vec<String>) -> Result<ExperimentReport> {
    let design = match &resolved.data {
        Some(path) => DesignSource::File {
            path: path.clone(),
            response: resolved.response.clone(),
        },
        None => DesignSource::Random,
    };
    let mut sim = resolved.sim.clone();
    if let DesignSource::File { path, response } = &design {
        let problem = crate::datagen::load_matrix(
            path,
            &crate::datagen::LoadOptions {
                response: response.parse().unwrap_or_default(),
                ..Default::default()
            },
        )?;
        sim.n = problem.design.nrows();
        sim.p = problem.design.ncols();
    }
    let config = StudyConfig {
        sim,
        design,
        methods: resolved.methods.clone(),
        replications: resolved.replications,
        mode: resolved.mode,
        timing,
        threads: resolved.threads,
    };
    run_simulation_study_with_invocation(&config, invocation)
}

fn real_data(resolved: &Resolved, mode: RealDataMode, invocation: Vec<String>) -> Result<ExperimentReport> {
    let path = resolved
        .data
        .clone()
        .ok_or_else(|| Error::InvalidConfig("--data is required".into()))?;
    let problem = load_real_problem(&path, &resolved.response)?;
    let config = RealDataConfig {
        mode,
        methods: resolved.methods.clone(),
        grid: resolved.sim.grid,
        selection: resolved.mode,
        seed: resolved.sim.seed,
        timing: false,
        threads: resolved.threads,
        data: Some(DataFile {
            path,
            response: resolved.response.clone(),
        }),
    };
    run_real_data_with_invocation(&problem, &config, invocation)
}

fn write_report(report: &ExperimentReport, resolved: &Resolved) -> Result<()> {
    let text = match resolved.format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()? + "\n",
    };
    match &resolved.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: &Cli, invocation: Vec<String>) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let (options, run): (&Options, fn(&Resolved, Vec<String>) -> Result<ExperimentReport>) = match &cli.command {
        Command::Simulate(o) => (o, |r, inv| simulation(r, false, inv)),
        Command::Bench(o) => (o, |r, inv| simulation(r, true, inv)),
        Command::Fit(o) => (o, |r, inv| real_data(r, RealDataMode::InSample, inv)),
        Command::Loo(o) => (o, |r, inv| real_data(r, RealDataMode::LeaveOneOut, inv)),
    };
    let resolved = resolve(options, env_seed.as_deref())?;
    let report = run(&resolved, invocation)?;
    write_report(&report, &resolved)
}

/// Exit status for an error: 2 for usage and configuration problems, 1 for
/// data and runtime failures.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidConfig(_) | Error::InvalidGrid(_) | Error::InvalidFolds { .. } => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let invocation = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, invocation) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
