//! Experiment drivers: the PAV pipeline, K-fold CV comparisons, simulation
//! and real-data studies, and report serialization.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cv_select, make_folds, CvOutcome};
use crate::datagen::{
    generate_semisynthetic_with_subjects, generate_synthetic, load_matrix, LoadOptions,
    RegressionProblem, ResponseColumn, SimConfig,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, TuningGrid};
use crate::linalg::{factorization_count, ridge_solve, DesignMatrix, RidgePath};
use crate::mapping::{build_edr_path, EdrPath};
use crate::pav::{personalized_error, select_tuning_many, PavSelection, SelectionMode, SubjectQuery};

/// A tuning-parameter calibration method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Pav,
    CrossValidation { folds: usize },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Pav => "PAV".to_string(),
            Method::CrossValidation { folds } => format!("CV{folds}"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "pav" {
            return Ok(Method::Pav);
        }
        lower
            .strip_prefix("cv")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 2)
            .map(|folds| Method::CrossValidation { folds })
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}; expected pav or cvK")))
    }
}

/// Parses a comma-separated method list such as `pav,cv5,cv10`.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("method list is empty".into()));
    }
    Ok(methods)
}

/// Output of the four-step PAV pipeline for a set of subjects.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub path: EdrPath,
    pub selections: Vec<PavSelection>,
    /// Factorization, path, mapping and all selections.
    pub elapsed: Duration,
    pub factorizations: usize,
}

/// Grid → ridge path from one SVD → edr mapping → per-subject selection.
pub fn run_pipeline(
    problem: &RegressionProblem,
    grid: &TuningGrid,
    subjects: &[DVector<f64>],
    mode: SelectionMode,
) -> Result<PipelineOutcome> {
    let queries = subjects
        .iter()
        .map(|z| SubjectQuery::new(z.clone()))
        .collect::<Result<Vec<_>>>()?;
    let before = factorization_count();
    let start = Instant::now();
    let ridge = RidgePath::fit(&problem.x, &problem.y, grid.clone())?;
    let path = build_edr_path(ridge, problem)?;
    let selections = select_tuning_many(&path, &queries, mode)?;
    let elapsed = start.elapsed();
    Ok(PipelineOutcome {
        path,
        selections,
        elapsed,
        factorizations: factorization_count() - before,
    })
}

/// K-fold CV selection followed by the full-data fit at the chosen `t`.
#[derive(Debug, Clone)]
pub struct CvFit {
    pub outcome: CvOutcome,
    pub estimate: DVector<f64>,
    pub elapsed: Duration,
    pub factorizations: usize,
}

pub fn run_cv(problem: &RegressionProblem, grid: &TuningGrid, folds: usize, seed: u64) -> Result<CvFit> {
    let plan = make_folds(problem.nrows(), folds, seed)?;
    let before = factorization_count();
    let start = Instant::now();
    let outcome = cv_select(problem, grid, &plan)?;
    let estimate = ridge_solve(&problem.x, &problem.y, outcome.t_cv)?;
    let elapsed = start.elapsed();
    Ok(CvFit {
        outcome,
        estimate,
        elapsed,
        factorizations: factorization_count() - before,
    })
}

/// Where the design of a simulation study comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DesignSource {
    /// Fresh random design every replication.
    Random,
    /// One random design drawn from this seed, fixed across replications.
    FixedRandom { seed: u64 },
    /// Covariates read from a delimited file, fixed across replications.
    /// The named response column, if any, is excluded from the design.
    File { path: PathBuf, response: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub design: DesignSource,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub mode: SelectionMode,
    /// Record wall-clock times. Off by default so reports are reproducible
    /// byte for byte.
    pub timing: bool,
    pub threads: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            design: DesignSource::Random,
            methods: vec![
                Method::Pav,
                Method::CrossValidation { folds: 5 },
                Method::CrossValidation { folds: 10 },
            ],
            replications: 100,
            mode: SelectionMode::Algorithm1,
            timing: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RealDataMode {
    InSample,
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDataConfig {
    pub mode: RealDataMode,
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub selection: SelectionMode,
    /// Seeds the CV fold assignments.
    pub seed: u64,
    pub timing: bool,
    pub threads: usize,
    /// Source file, recorded for replay.
    pub data: Option<DataFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub path: PathBuf,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StudyKind {
    Simulation(StudyConfig),
    RealData(RealDataConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: String,
    pub mean_error: f64,
    pub sd_error: f64,
    pub seconds: Option<f64>,
    /// Wall-clock relative to PAV (or to the first method when PAV is not
    /// part of the comparison).
    pub scaled_runtime: Option<f64>,
    /// Design factorizations per run (replication or held-out trial).
    pub factorizations_per_run: usize,
    /// Per-subject errors in run order.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub kind: StudyKind,
    /// Seed of every replication or trial, in order.
    pub seeds: Vec<u64>,
    pub invocation: Vec<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<MethodRecord>,
    pub metadata: ReportMetadata,
}

/// Per-run output of one method.
#[derive(Debug, Clone)]
struct RunResult {
    errors: Vec<f64>,
    elapsed: Duration,
    factorizations: usize,
}

/// Deterministic seed derivation for replication `index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fold_seed(run_seed: u64, folds: usize) -> u64 {
    derive_seed(run_seed ^ 0xc0ff_ee00, folds as u64)
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn map_runs<T, F>(count: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    in_pool(threads, || {
        if threads <= 1 {
            (0..count).map(&f).collect::<Result<Vec<T>>>()
        } else {
            (0..count).into_par_iter().map(&f).collect::<Result<Vec<T>>>()
        }
    })?
}

fn load_design(source: &DesignSource, sim: &SimConfig) -> Result<Option<DesignMatrix>> {
    match source {
        DesignSource::Random => Ok(None),
        DesignSource::FixedRandom { seed } => {
            let config = SimConfig {
                seed: *seed,
                ..sim.clone()
            };
            Ok(Some(generate_synthetic(&config)?.problem.x))
        }
        DesignSource::File { path, response } => {
            let options = LoadOptions {
                response: response.parse::<ResponseColumn>().unwrap_or_default(),
                normalize: true,
                ..LoadOptions::default()
            };
            Ok(Some(load_matrix(path, &options)?.design))
        }
    }
}

/// Runs every method on `replications` simulated problems. The personalized
/// error of a subject `z` is `|zᵀ(β* − β̂)|`; CV uses its single chosen `t`
/// for all subjects.
pub fn run_simulation_study(config: &StudyConfig) -> Result<ExperimentReport> {
    run_simulation_study_with_invocation(config, Vec::new())
}

pub fn run_simulation_study_with_invocation(
    config: &StudyConfig,
    invocation: Vec<String>,
) -> Result<ExperimentReport> {
    if config.replications < 1 {
        return Err(Error::InvalidConfig("need at least one replication".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    config.sim.validate()?;
    let fixed = load_design(&config.design, &config.sim)?;
    let seeds: Vec<u64> = (0..config.replications as u64)
        .map(|r| derive_seed(config.sim.seed, r))
        .collect();
    let grid = TuningGrid::log_spaced(&config.sim.grid)?;

    let runs = map_runs(config.replications, config.threads, |r| {
        let seed = seeds[r];
        let (problem, subjects) = match &fixed {
            None => {
                let data = generate_synthetic(&SimConfig {
                    seed,
                    ..config.sim.clone()
                })?;
                (data.problem, data.subjects)
            }
            Some(x) => generate_semisynthetic_with_subjects(
                x.clone(),
                config.sim.snr,
                seed,
                config.sim.n_test_subjects,
            )?,
        };
        let beta = &problem.truth.as_ref().ok_or(Error::MissingTruth)?.beta;
        config
            .methods
            .iter()
            .map(|method| match *method {
                Method::Pav => {
                    let outcome = run_pipeline(&problem, &grid, &subjects, config.mode)?;
                    let errors = subjects
                        .iter()
                        .zip(&outcome.selections)
                        .map(|(z, s)| personalized_error(z, beta, &outcome.path.estimate(s.point)))
                        .collect();
                    Ok(RunResult {
                        errors,
                        elapsed: outcome.elapsed,
                        factorizations: outcome.factorizations,
                    })
                }
                Method::CrossValidation { folds } => {
                    let fit = run_cv(&problem, &grid, folds, fold_seed(seed, folds))?;
                    let errors = subjects
                        .iter()
                        .map(|z| personalized_error(z, beta, &fit.estimate))
                        .collect();
                    Ok(RunResult {
                        errors,
                        elapsed: fit.elapsed,
                        factorizations: fit.factorizations,
                    })
                }
            })
            .collect::<Result<Vec<RunResult>>>()
    })?;

    Ok(ExperimentReport {
        records: aggregate(&config.methods, &runs, config.timing),
        metadata: ReportMetadata {
            kind: StudyKind::Simulation(config.clone()),
            seeds,
            invocation,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Real covariates and responses without ground truth. The error of sample
/// `i` is `|yᵢ − xᵢᵀβ̂|`. In-sample mode fits once on all samples (PAV
/// calibrates with `z = xᵢ`); leave-one-out refits everything without
/// sample `i` and predicts it.
pub fn run_real_data(problem: &RegressionProblem, config: &RealDataConfig) -> Result<ExperimentReport> {
    run_real_data_with_invocation(problem, config, Vec::new())
}

pub fn run_real_data_with_invocation(
    problem: &RegressionProblem,
    config: &RealDataConfig,
    invocation: Vec<String>,
) -> Result<ExperimentReport> {
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    let n = problem.nrows();
    if config.mode == RealDataMode::LeaveOneOut && n < 3 {
        return Err(Error::InvalidConfig(format!(
            "leave-one-out needs at least 3 samples, got {n}"
        )));
    }
    let grid = TuningGrid::log_spaced(&config.grid)?;
    let rows: Vec<DVector<f64>> = (0..n).map(|i| problem.x.row_vector(i)).collect();

    let (runs, seeds) = match config.mode {
        RealDataMode::InSample => {
            let seed = config.seed;
            let run = config
                .methods
                .iter()
                .map(|method| match *method {
                    Method::Pav => {
                        let outcome = run_pipeline(problem, &grid, &rows, config.selection)?;
                        let errors = outcome
                            .selections
                            .iter()
                            .zip(problem.y.iter())
                            .map(|(s, y)| (y - s.prediction).abs())
                            .collect();
                        Ok(RunResult {
                            errors,
                            elapsed: outcome.elapsed,
                            factorizations: outcome.factorizations,
                        })
                    }
                    Method::CrossValidation { folds } => {
                        let fit = run_cv(problem, &grid, folds, fold_seed(seed, folds))?;
                        let predictions = problem.x.values() * &fit.estimate;
                        let errors = (&problem.y - predictions).iter().map(|e| e.abs()).collect();
                        Ok(RunResult {
                            errors,
                            elapsed: fit.elapsed,
                            factorizations: fit.factorizations,
                        })
                    }
                })
                .collect::<Result<Vec<RunResult>>>()?;
            (vec![run], vec![seed])
        }
        RealDataMode::LeaveOneOut => {
            let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(config.seed, i)).collect();
            let runs = map_runs(n, config.threads, |i| {
                let training: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let train = problem.select_rows(&training);
                let held_x = &rows[i];
                let held_y = problem.y[i];
                config
                    .methods
                    .iter()
                    .map(|method| match *method {
                        Method::Pav => {
                            let outcome =
                                run_pipeline(&train, &grid, std::slice::from_ref(held_x), config.selection)?;
                            Ok(RunResult {
                                errors: vec![(held_y - outcome.selections[0].prediction).abs()],
                                elapsed: outcome.elapsed,
                                factorizations: outcome.factorizations,
                            })
                        }
                        Method::CrossValidation { folds } => {
                            let fit = run_cv(&train, &grid, folds, fold_seed(seeds[i], folds))?;
                            Ok(RunResult {
                                errors: vec![(held_y - held_x.dot(&fit.estimate)).abs()],
                                elapsed: fit.elapsed,
                                factorizations: fit.factorizations,
                            })
                        }
                    })
                    .collect::<Result<Vec<RunResult>>>()
            })?;
            (runs, seeds)
        }
    };

    Ok(ExperimentReport {
        records: aggregate(&config.methods, &runs, config.timing),
        metadata: ReportMetadata {
            kind: StudyKind::RealData(config.clone()),
            seeds,
            invocation,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

fn aggregate(methods: &[Method], runs: &[Vec<RunResult>], timing: bool) -> Vec<MethodRecord> {
    let seconds: Vec<f64> = (0..methods.len())
        .map(|k| runs.iter().map(|run| run[k].elapsed.as_secs_f64()).sum())
        .collect();
    let reference = methods
        .iter()
        .position(|m| *m == Method::Pav)
        .unwrap_or(0);
    methods
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let errors: Vec<f64> = runs.iter().flat_map(|run| run[k].errors.iter().copied()).collect();
            let (mean_error, sd_error) = mean_and_sd(&errors);
            let scaled = if k == reference {
                1.0
            } else {
                seconds[k] / seconds[reference]
            };
            MethodRecord {
                method: method.name(),
                mean_error,
                sd_error,
                seconds: timing.then_some(seconds[k]),
                scaled_runtime: timing.then_some(scaled),
                factorizations_per_run: runs.first().map_or(0, |run| run[k].factorizations),
                errors,
            }
        })
        .collect()
}

/// Mean and sample standard deviation (divisor `n − 1`; zero for a single
/// value).
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reruns the study described in a report's metadata.
pub fn replay(report: &ExperimentReport) -> Result<ExperimentReport> {
    let invocation = report.metadata.invocation.clone();
    match &report.metadata.kind {
        StudyKind::Simulation(config) => run_simulation_study_with_invocation(config, invocation),
        StudyKind::RealData(config) => {
            let data = config.data.as_ref().ok_or_else(|| {
                Error::InvalidConfig("report does not record its data file".into())
            })?;
            let problem = load_real_problem(&data.path, &data.response)?;
            run_real_data_with_invocation(&problem, config, invocation)
        }
    }
}

/// Loads covariates and a response column, normalizing the covariate
/// columns once on the full data.
pub fn load_real_problem(path: &Path, response: &str) -> Result<RegressionProblem> {
    let column = response.parse::<ResponseColumn>().unwrap_or_default();
    if column == ResponseColumn::None {
        return Err(Error::InvalidConfig("a response column is required".into()));
    }
    let options = LoadOptions {
        response: column,
        normalize: true,
        ..LoadOptions::default()
    };
    let data = load_matrix(path, &options)?;
    let y = data.response.ok_or_else(|| Error::MissingResponse {
        path: path.to_path_buf(),
        name: response.to_string(),
    })?;
    RegressionProblem::new(data.design, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "method,mean_error,sd_error,seconds,scaled_runtime";

/// One summary row of a CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub mean_error: f64,
    pub sd_error: f64,
    pub seconds: Option<f64>,
    pub scaled_runtime: Option<f64>,
}

impl ExperimentReport {
    pub fn record(&self, method: &str) -> Option<&MethodRecord> {
        self.records.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let optional = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.mean_error,
                r.sd_error,
                optional(r.seconds),
                optional(r.scaled_runtime)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.records
            .iter()
            .map(|r| SummaryRow {
                method: r.method.clone(),
                mean_error: r.mean_error,
                sd_error: r.sd_error,
                seconds: r.seconds,
                scaled_runtime: r.scaled_runtime,
            })
            .collect()
    }
}

/// Writes the report. CSV holds one summary row per method; JSON holds the
/// full report including configuration, seeds and per-subject errors.
pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json_report(path: &Path) -> Result<ExperimentReport> {
    ExperimentReport::from_json(&fs::read_to_string(path)?)
}

pub fn read_csv_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })?;
    let parse_error = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(i + 2, e.to_string()))?;
        let number = |k: usize| -> Result<f64> {
            record
                .get(k)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| parse_error(i + 2, e.to_string()))
        };
        let optional = |k: usize| -> Result<Option<f64>> {
            match record.get(k).unwrap_or_default() {
                "" => Ok(None),
                _ => number(k).map(Some),
            }
        };
        rows.push(SummaryRow {
            method: record.get(0).unwrap_or_default().to_string(),
            mean_error: number(1)?,
            sd_error: number(2)?,
            seconds: optional(3)?,
            scaled_runtime: optional(4)?,
        });
    }
    Ok(rows)
}
