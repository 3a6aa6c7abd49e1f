//! Dense linear algebra: column normalization, SVD, and closed-form ridge
//! solution paths.
//!
//! A ridge path is computed from one thin SVD `X = U D Vᵀ` of the design:
//! every grid point only changes the diagonal shrinkage `d / (d² + t)`, so
//! the whole path costs one factorization plus one matrix product.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::grid::{TuningGrid, TuningScale};

/// Columns with a Euclidean norm below this are rejected by normalization.
pub const ZERO_COLUMN_NORM: f64 = 1e-14;

/// Singular values below `RANK_CUTOFF * d₁` are treated as exact zeros.
pub const RANK_CUTOFF: f64 = 1e-12;

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of design-matrix factorizations performed by [`svd`] on the
/// current thread since it started.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(Cell::get)
}

/// Design matrix with `n` sample rows and `p` covariate columns.
///
/// `column_norms` holds the Euclidean norms the columns had before
/// [`DesignMatrix::normalize_columns`]; it is all ones for a matrix built
/// with [`DesignMatrix::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_norms: DVector<f64>,
}

impl DesignMatrix {
    /// Wraps a matrix as-is, without rescaling.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        validate_entries(&values)?;
        let p = values.ncols();
        Ok(Self {
            values,
            column_norms: DVector::from_element(p, 1.0),
        })
    }

    /// Rescales every column to unit Euclidean norm.
    pub fn normalize_columns(mut values: DMatrix<f64>) -> Result<Self> {
        validate_entries(&values)?;
        let mut norms = DVector::zeros(values.ncols());
        for (j, mut column) in values.column_iter_mut().enumerate() {
            let norm = column.norm();
            if norm < ZERO_COLUMN_NORM {
                return Err(Error::ZeroColumn { column: j });
            }
            column /= norm;
            norms[j] = norm;
        }
        Ok(Self {
            values,
            column_norms: norms,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_norms(&self) -> &DVector<f64> {
        &self.column_norms
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Row `i` as a column vector.
    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Submatrix made of the given rows, in the given order. Columns are not
    /// renormalized.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            values: self.values.select_rows(rows),
            column_norms: self.column_norms.clone(),
        }
    }
}

fn validate_entries(values: &DMatrix<f64>) -> Result<()> {
    if values.nrows() == 0 || values.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            if !values[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
    }
    Ok(())
}

/// Thin singular value decomposition `X = U diag(d) Vᵀ` with
/// `k = min(n, p)` singular triplets in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `n × k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// `d₁ ≥ d₂ ≥ … ≥ d_k ≥ 0`.
    pub singular_values: DVector<f64>,
    /// `p × k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    /// Number of singular values above the relative rank cutoff.
    pub fn rank(&self) -> usize {
        let Some(&largest) = self.singular_values.iter().next() else {
            return 0;
        };
        self.singular_values
            .iter()
            .take_while(|&&d| d > RANK_CUTOFF * largest && d > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (j, mut column) in scaled.column_iter_mut().enumerate() {
            column *= self.singular_values[j];
        }
        scaled * self.v.transpose()
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }
}

/// Factorizes the design matrix. Each call bumps [`factorization_count`].
pub fn svd(x: &DesignMatrix) -> Result<SvdFactors> {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    thin_svd(&x.values)
}

/// Thin SVD of an arbitrary matrix, not counted as a design factorization.
pub fn thin_svd(values: &DMatrix<f64>) -> Result<SvdFactors> {
    let (n, p) = values.shape();
    let decomposition = faer::Mat::from_fn(n, p, |i, j| values[(i, j)])
        .thin_svd()
        .map_err(|_| Error::NumericalFailure)?;
    let (u, d, v) = (decomposition.U(), decomposition.S().column_vector(), decomposition.V());
    let k = n.min(p);
    Ok(SvdFactors {
        u: DMatrix::from_fn(n, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| d[i]),
        v: DMatrix::from_fn(p, k, |i, j| v[(i, j)]),
    })
}

/// Ridge estimates for every grid point, stored column-wise (`p × m`).
#[derive(Debug, Clone)]
pub struct RidgePath {
    factors: SvdFactors,
    grid: TuningGrid,
    estimates: DMatrix<f64>,
    rotated: DVector<f64>,
}

/// Evaluates `β̂(t) = V D† Uᵀ y` for every `t` in the grid, reusing one
/// factorization.
pub fn ridge_path(factors: SvdFactors, y: &DVector<f64>, grid: TuningGrid) -> Result<RidgePath> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.scale() != TuningScale::Ridge {
        return Err(Error::InvalidArgument(
            "ridge_path needs a grid on the ridge scale".into(),
        ));
    }
    if let Some(&bad) = grid.values().iter().find(|t| !(**t > 0.0)) {
        return Err(Error::NonpositiveTuning(bad));
    }
    if y.len() != factors.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {} rows",
            y.len(),
            factors.nrows()
        )));
    }
    let rank = factors.rank();
    let projected = factors.u.columns(0, rank).tr_mul(y);
    let mut shrunk = DMatrix::zeros(rank, grid.len());
    for (i, &t) in grid.values().iter().enumerate() {
        for k in 0..rank {
            let d = factors.singular_values[k];
            shrunk[(k, i)] = d / (d * d + t) * projected[k];
        }
    }
    let estimates = factors.v.columns(0, rank) * shrunk;
    Ok(RidgePath {
        factors,
        grid,
        estimates,
        rotated: projected,
    })
}

impl RidgePath {
    /// Factorizes `x` once and evaluates the whole path.
    pub fn fit(x: &DesignMatrix, y: &DVector<f64>, grid: TuningGrid) -> Result<Self> {
        ridge_path(svd(x)?, y, grid)
    }

    pub fn factors(&self) -> &SvdFactors {
        &self.factors
    }

    pub fn grid(&self) -> &TuningGrid {
        &self.grid
    }

    /// `p × m` matrix whose column `i` is `β̂(tᵢ)`.
    pub fn estimates(&self) -> &DMatrix<f64> {
        &self.estimates
    }

    pub fn estimate(&self, i: usize) -> DVectorView<'_, f64> {
        self.estimates.column(i)
    }

    /// `U_rᵀy`, the response in the coordinates of the retained left
    /// singular vectors.
    pub fn rotated_response(&self) -> &DVector<f64> {
        &self.rotated
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Single ridge fit through a Cholesky solve of the smaller Gram system:
/// `(XᵀX + tI)⁻¹Xᵀy` when `p ≤ n`, `Xᵀ(XXᵀ + tI)⁻¹y` otherwise.
pub fn ridge_solve(x: &DesignMatrix, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTuning(t));
    }
    let values = x.values();
    if y.len() != values.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {} rows",
            y.len(),
            values.nrows()
        )));
    }
    if values.ncols() <= values.nrows() {
        let mut gram = values.tr_mul(values);
        gram.fill_diagonal_plus(t);
        let chol = gram.cholesky().ok_or(Error::NumericalFailure)?;
        Ok(chol.solve(&values.tr_mul(y)))
    } else {
        let mut gram = values * values.transpose();
        gram.fill_diagonal_plus(t);
        let chol = gram.cholesky().ok_or(Error::NumericalFailure)?;
        Ok(values.tr_mul(&chol.solve(y)))
    }
}

trait FillDiagonalPlus {
    fn fill_diagonal_plus(&mut self, value: f64);
}

impl FillDiagonalPlus for DMatrix<f64> {
    fn fill_diagonal_plus(&mut self, value: f64) {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] += value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Neumaier-compensated sum of squares, independent of nalgebra's norm.
    fn compensated_norm(values: impl Iterator<Item = f64>) -> f64 {
        let mut sum = 0.0f64;
        let mut compensation = 0.0f64;
        for v in values {
            let term = v * v;
            let t = sum + term;
            if sum.abs() >= term.abs() {
                compensation += (sum - t) + term;
            } else {
                compensation += (term - t) + sum;
            }
            sum = t;
        }
        (sum + compensation).sqrt()
    }

    #[test]
    fn normalize_three_four_five() {
        let x = DesignMatrix::normalize_columns(dmatrix![3.0; 4.0]).unwrap();
        assert!((x.values()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((x.values()[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(x.column_norms()[0], 5.0);
    }

    #[test]
    fn normalize_identity_is_noop() {
        let x = DesignMatrix::normalize_columns(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(x.values(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(x.column_norms(), &DVector::from_element(3, 1.0));
    }

    #[test]
    fn normalize_random_columns_have_unit_norm() {
        let x = DesignMatrix::normalize_columns(random_matrix(10, 5, 3)).unwrap();
        for column in x.values().column_iter() {
            let norm = compensated_norm(column.iter().copied());
            assert!((norm - 1.0).abs() <= 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn normalize_rejects_zero_column() {
        let raw = dmatrix![1.0, 0.0; 2.0, 0.0];
        assert!(matches!(
            DesignMatrix::normalize_columns(raw),
            Err(Error::ZeroColumn { column: 1 })
        ));
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            DesignMatrix::new(dmatrix![1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, column: 1 })
        ));
        assert!(matches!(
            DesignMatrix::new(DMatrix::zeros(0, 3)),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn svd_of_diagonal() {
        let x = DesignMatrix::new(dmatrix![2.0, 0.0; 0.0, 1.0]).unwrap();
        let f = svd(&x).unwrap();
        assert!((f.singular_values[0] - 2.0).abs() < 1e-14);
        assert!((f.singular_values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_of_orthonormal_rows() {
        // Q has orthonormal rows: take the transpose of a thin QR factor.
        let q = random_matrix(7, 4, 9).qr().q().transpose();
        let x = DesignMatrix::new(q).unwrap();
        let f = svd(&x).unwrap();
        for d in f.singular_values.iter() {
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_reconstructs_wide_matrix() {
        let raw = random_matrix(8, 12, 11);
        let x = DesignMatrix::new(raw.clone()).unwrap();
        let f = svd(&x).unwrap();
        let err = (&raw - f.reconstruct()).norm() / raw.norm();
        assert!(err <= 1e-10, "relative reconstruction error {err}");
        for w in f.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn ridge_path_orthonormal_design_is_scaled_correlation() {
        let q = random_matrix(6, 6, 5).qr().q();
        let x = DesignMatrix::new(q).unwrap();
        let y = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let grid = TuningGrid::ridge(vec![0.5, 2.0]).unwrap();
        let path = RidgePath::fit(&x, &y, grid).unwrap();
        let xty = x.values().tr_mul(&y);
        for (i, &t) in [0.5, 2.0].iter().enumerate() {
            let expected = &xty / (1.0 + t);
            assert!((path.estimate(i) - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn ridge_path_counts_one_factorization() {
        let x = DesignMatrix::new(random_matrix(10, 20, 1)).unwrap();
        let y = DVector::from_element(10, 1.0);
        for m in [1usize, 7, 200] {
            let grid = TuningGrid::ridge((1..=m).map(|i| i as f64 * 0.1).collect()).unwrap();
            let before = factorization_count();
            let path = RidgePath::fit(&x, &y, grid).unwrap();
            assert_eq!(factorization_count() - before, 1);
            assert_eq!(path.estimates().ncols(), m);
        }
    }

    #[test]
    fn ridge_path_rejects_bad_response() {
        let x = DesignMatrix::new(random_matrix(4, 3, 2)).unwrap();
        let f = svd(&x).unwrap();
        let grid = TuningGrid::ridge(vec![1.0]).unwrap();
        assert!(matches!(
            ridge_path(f, &DVector::zeros(5), grid),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn shrinkage_to_zero_for_large_tuning() {
        let x = DesignMatrix::new(random_matrix(10, 4, 8)).unwrap();
        let y = DVector::from_fn(10, |i, _| (i as f64).sin());
        let grid = TuningGrid::ridge(vec![1e2, 1e4, 1e6, 1e8]).unwrap();
        let path = RidgePath::fit(&x, &y, grid).unwrap();
        let norms: Vec<f64> = (0..4).map(|i| path.estimate(i).norm()).collect();
        for w in norms.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(norms[3] < 1e-6);
    }

    #[test]
    fn ridge_solve_matches_path_both_shapes() {
        for (n, p) in [(12, 5), (5, 12)] {
            let x = DesignMatrix::new(random_matrix(n, p, 21)).unwrap();
            let y = DVector::from_fn(n, |i, _| i as f64);
            let grid = TuningGrid::ridge(vec![0.3]).unwrap();
            let path = RidgePath::fit(&x, &y, grid).unwrap();
            let direct = ridge_solve(&x, &y, 0.3).unwrap();
            assert!((path.estimate(0) - &direct).norm() <= 1e-10 * direct.norm());
        }
    }
}
