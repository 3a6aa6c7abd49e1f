//! Regression problems: the data model, synthetic and semi-synthetic
//! generators, and delimited-file ingestion.

mod io;

pub use io::{load_matrix, save_matrix, HeaderMode, LoadOptions, LoadedData, ResponseColumn};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, TuningGrid};
use crate::linalg::{thin_svd, DesignMatrix};

/// Ground truth attached to simulated problems: `y = Xβ* + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: DVector<f64>,
    pub noise: DVector<f64>,
    /// Standard deviation the noise entries were drawn with.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub x: DesignMatrix,
    pub y: DVector<f64>,
    pub truth: Option<Truth>,
}

impl RegressionProblem {
    pub fn new(x: DesignMatrix, y: DVector<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, design has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("response has non-finite entries".into()));
        }
        Ok(Self { x, y, truth: None })
    }

    /// Builds `y = Xβ* + u` from the truth.
    pub fn from_truth(x: DesignMatrix, truth: Truth) -> Result<Self> {
        if truth.beta.len() != x.ncols() || truth.noise.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {} and noise {}, design is {}x{}",
                truth.beta.len(),
                truth.noise.len(),
                x.nrows(),
                x.ncols()
            )));
        }
        let y = x.values() * &truth.beta + &truth.noise;
        Ok(Self {
            x,
            y,
            truth: Some(truth),
        })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Subproblem on the given rows; the noise vector is subset alongside.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let truth = self.truth.as_ref().map(|t| Truth {
            beta: t.beta.clone(),
            noise: DVector::from_iterator(rows.len(), rows.iter().map(|&i| t.noise[i])),
            sigma: t.sigma,
        });
        Self {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            truth,
        }
    }
}

/// Simulation settings for the random-design study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// `Var(Xβ*) / Var(u)`.
    pub snr: f64,
    /// Variance of the design mean `μ`.
    pub mu_variance: f64,
    /// Draw one `μ` per column instead of one for the whole matrix.
    pub mu_per_column: bool,
    pub grid: GridSpec,
    pub n_test_subjects: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 50,
            p: 100,
            snr: 0.5,
            mu_variance: 10.0,
            mu_per_column: false,
            grid: GridSpec::default(),
            n_test_subjects: 100,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p < 1 {
            return Err(Error::InvalidConfig("p must be at least 1".into()));
        }
        if !(self.snr.is_finite() && self.snr > 0.0) {
            return Err(Error::InvalidConfig(format!("snr must be positive, got {}", self.snr)));
        }
        if !(self.mu_variance.is_finite() && self.mu_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mu variance must be nonnegative, got {}",
                self.mu_variance
            )));
        }
        if self.n_test_subjects < 1 {
            return Err(Error::InvalidConfig("need at least one test subject".into()));
        }
        self.grid
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// One synthetic replication.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub problem: RegressionProblem,
    pub subjects: Vec<DVector<f64>>,
    pub grid: TuningGrid,
}

/// Random design with entries `N(μ, 1)`, `μ ~ N(0, mu_variance)`, unit-norm
/// columns, row-space `β*`, Gaussian noise at the configured SNR, and test
/// subjects uniform on `[-1, 1]ᵖ`.
pub fn generate_synthetic(config: &SimConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mu_sd = config.mu_variance.sqrt();
    let means: Vec<f64> = if config.mu_per_column {
        (0..config.p).map(|_| mu_sd * standard_normal(&mut rng)).collect()
    } else {
        vec![mu_sd * standard_normal(&mut rng); config.p]
    };
    let raw = DMatrix::from_fn(config.n, config.p, |_, j| {
        means[j] + standard_normal(&mut rng)
    });
    let x = DesignMatrix::normalize_columns(raw)?;
    let problem = draw_truth(x, config.snr, &mut rng)?;
    let subjects = draw_subjects(config.p, config.n_test_subjects, &mut rng);
    let grid = TuningGrid::log_spaced(&config.grid)?;
    Ok(SyntheticData {
        problem,
        subjects,
        grid,
    })
}

/// Simulated response on a fixed (typically real) design.
pub fn generate_semisynthetic(x: DesignMatrix, snr: f64, seed: u64) -> Result<RegressionProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_truth(x, snr, &mut rng)
}

/// Semi-synthetic problem together with its test subjects, drawn from one
/// seeded stream.
pub fn generate_semisynthetic_with_subjects(
    x: DesignMatrix,
    snr: f64,
    seed: u64,
    n_subjects: usize,
) -> Result<(RegressionProblem, Vec<DVector<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = x.ncols();
    let problem = draw_truth(x, snr, &mut rng)?;
    let subjects = draw_subjects(p, n_subjects, &mut rng);
    Ok((problem, subjects))
}

fn draw_truth(x: DesignMatrix, snr: f64, rng: &mut ChaCha8Rng) -> Result<RegressionProblem> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(Error::InvalidConfig(format!("snr must be positive, got {snr}")));
    }
    let raw_beta = DVector::from_fn(x.ncols(), |_, _| standard_normal(rng));
    let beta = project_onto_row_space(x.values(), &raw_beta)?;
    let signal = x.values() * &beta;
    let sigma = (population_variance(signal.as_slice()) / snr).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    let noise = DVector::from_fn(x.nrows(), |_, _| normal.sample(rng));
    RegressionProblem::from_truth(
        x,
        Truth {
            beta,
            noise,
            sigma,
        },
    )
}

/// Test subjects with i.i.d. `U[-1, 1]` entries.
pub fn draw_subjects(p: usize, count: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(p, |_, _| rng.random_range(-1.0..=1.0)))
        .collect()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Variance with divisor `n`.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Orthogonal projection onto the span of the rows of `x`, `V_r V_rᵀ β`.
pub fn project_onto_row_space(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    let factors = thin_svd(x)?;
    let basis = factors.v.columns(0, factors.rank());
    let coefficients = basis.tr_mul(beta);
    Ok(basis * coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> SimConfig {
        SimConfig {
            n: 20,
            p: 35,
            n_test_subjects: 5,
            grid: GridSpec {
                count: 10,
                min_log10: -2.0,
                max_log10: 2.0,
            },
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let data = generate_synthetic(&small_config(3)).unwrap();
        let beta = &data.problem.truth.as_ref().unwrap().beta;
        let again = project_onto_row_space(data.problem.x.values(), beta).unwrap();
        assert!((beta - again).norm() <= 1e-12 * beta.norm());
    }

    #[test]
    fn full_column_rank_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(12, 6, |_, _| standard_normal(&mut rng));
        let beta = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let projected = project_onto_row_space(&x, &beta).unwrap();
        assert!((projected - &beta).norm() <= 1e-12 * beta.norm());
    }

    #[test]
    fn response_decomposes_into_signal_and_noise() {
        let data = generate_synthetic(&small_config(5)).unwrap();
        let truth = data.problem.truth.as_ref().unwrap();
        let residual = &data.problem.y - data.problem.x.values() * &truth.beta;
        assert!((residual - &truth.noise).norm() <= 1e-12 * data.problem.y.norm());
    }

    #[test]
    fn generated_design_has_unit_columns() {
        let data = generate_synthetic(&small_config(8)).unwrap();
        for column in data.problem.x.values().column_iter() {
            assert!((column.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(data.subjects.len(), 5);
        assert!(data
            .subjects
            .iter()
            .all(|z| z.len() == 35 && z.iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_synthetic(&small_config(42)).unwrap();
        let b = generate_synthetic(&small_config(42)).unwrap();
        assert_eq!(a.problem, b.problem);
        assert_eq!(a.subjects, b.subjects);
        let c = generate_synthetic(&small_config(43)).unwrap();
        assert_ne!(a.problem.y, c.problem.y);
    }

    #[test]
    fn per_column_means_switch() {
        let mut config = small_config(2);
        config.mu_per_column = true;
        let data = generate_synthetic(&config).unwrap();
        assert_eq!(data.problem.ncols(), 35);
    }

    #[test]
    fn semisynthetic_seeds_differ() {
        let data = generate_synthetic(&small_config(1)).unwrap();
        let a = generate_semisynthetic(data.problem.x.clone(), 0.5, 10).unwrap();
        let b = generate_semisynthetic(data.problem.x.clone(), 0.5, 11).unwrap();
        assert_ne!(a.truth.unwrap().beta, b.truth.unwrap().beta);
    }

    #[test]
    fn config_validation() {
        let mut config = SimConfig::default();
        config.n = 1;
        assert!(config.validate().is_err());
        let mut config = SimConfig::default();
        config.snr = 0.0;
        assert!(config.validate().is_err());
        let mut config = SimConfig::default();
        config.grid.count = 1;
        assert!(config.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }

    #[test]
    fn population_variance_uses_n_divisor() {
        assert_eq!(population_variance(&[1.0, 3.0]), 1.0);
        assert_eq!(population_variance(&[]), 0.0);
    }
}
