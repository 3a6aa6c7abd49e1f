//! Euclidean-distance ridge (edr) through the ridge tuning bijection.
//!
//! The edr program `min ‖y − Xβ‖² + r‖β‖` shares its solution family with
//! ridge: `β̂_edr(φ(t)) = β̂_ridge(t)` for `φ(t) = ‖2Xᵀ(y − Xβ̂_ridge(t))‖`.
//! So an edr path is a ridge path with relabelled tuning parameters.

use std::collections::HashSet;

use nalgebra::{DVector, DVectorView, Dyn, Storage, Vector};

use crate::datagen::RegressionProblem;
use crate::error::{Error, Result};
use crate::linalg::RidgePath;

/// Estimates with a Euclidean norm below this carry no direction.
pub const ZERO_ESTIMATE_NORM: f64 = 1e-14;

/// Gradient of the least-squares term at `β`: `2Xᵀ(y − Xβ)`.
fn score<S: Storage<f64, Dyn>>(
    beta: &Vector<f64, Dyn, S>,
    problem: &RegressionProblem,
) -> DVector<f64> {
    let x = problem.x.values();
    let residual = &problem.y - x * beta;
    x.tr_mul(&residual) * 2.0
}

/// Maps a ridge tuning parameter to its edr counterpart,
/// `r = ‖2Xᵀ(y − Xβ̂_ridge(t))‖₂`.
///
/// `estimate` must be the ridge solution for `t` on `problem`.
pub fn map_tuning<S: Storage<f64, Dyn>>(
    t: f64,
    estimate: &Vector<f64, Dyn, S>,
    problem: &RegressionProblem,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTuning(t));
    }
    if estimate.len() != problem.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {}, design has {} columns",
            estimate.len(),
            problem.ncols()
        )));
    }
    if estimate.norm() < ZERO_ESTIMATE_NORM {
        return Err(Error::ZeroEstimate);
    }
    Ok(score(estimate, problem).norm())
}

/// Closed form of the same mapping, `2t‖β̂_ridge(t)‖₂`. Only used as a
/// consistency check.
pub fn mapped_tuning_closed_form<S: Storage<f64, Dyn>>(t: f64, estimate: &Vector<f64, Dyn, S>) -> f64 {
    2.0 * t * estimate.norm()
}

/// `‖y − Xβ‖₂² + r‖β‖₂`.
pub fn edr_objective<S: Storage<f64, Dyn>>(
    beta: &Vector<f64, Dyn, S>,
    r: f64,
    problem: &RegressionProblem,
) -> f64 {
    let residual = &problem.y - problem.x.values() * beta;
    residual.norm_squared() + r * beta.norm()
}

/// Stationarity residual of the edr program,
/// `‖2Xᵀ(y − Xβ) − r·β/‖β‖₂‖₂`.
pub fn kkt_residual<S: Storage<f64, Dyn>>(
    beta: &Vector<f64, Dyn, S>,
    r: f64,
    problem: &RegressionProblem,
) -> f64 {
    let direction = beta / beta.norm();
    (score(beta, problem) - direction * r).norm()
}

/// One retained grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdrPoint {
    /// Column of the underlying ridge path.
    pub column: usize,
    pub ridge_tuning: f64,
    pub edr_tuning: f64,
    /// `‖β̂‖₂` at this point.
    pub estimate_norm: f64,
}

/// A ridge path relabelled on the edr scale. Estimates are the ridge path's
/// own columns.
#[derive(Debug, Clone)]
pub struct EdrPath {
    ridge: RidgePath,
    points: Vec<EdrPoint>,
    warnings: Vec<String>,
}

/// Maps every grid point of `path`. Points with a zero estimate are dropped,
/// and so are points whose `r` repeats an earlier one (the smaller `t` is
/// kept). Each drop is recorded in [`EdrPath::warnings`].
pub fn build_edr_path(path: RidgePath, problem: &RegressionProblem) -> Result<EdrPath> {
    if path.factors().nrows() != problem.nrows() || path.factors().ncols() != problem.ncols() {
        return Err(Error::DimensionMismatch(
            "ridge path was computed for a different design".into(),
        ));
    }
    let mut points = Vec::with_capacity(path.len());
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    // In the coordinates of the retained singular vectors the score is
    // `2 d t/(d² + t) · Uᵀy` and the estimate is `d/(d² + t) · Uᵀy`, so both
    // norms cost O(rank) per grid point.
    let singular = &path.factors().singular_values;
    let rotated = path.rotated_response();
    for (column, &t) in path.grid().values().iter().enumerate() {
        let (mut score_sq, mut estimate_sq) = (0.0, 0.0);
        for (k, &w) in rotated.iter().enumerate() {
            let d = singular[k];
            let shrink = d / (d * d + t) * w;
            estimate_sq += shrink * shrink;
            score_sq += (2.0 * t * shrink).powi(2);
        }
        let estimate_norm = estimate_sq.sqrt();
        let mapped = if estimate_norm < ZERO_ESTIMATE_NORM {
            Err(Error::ZeroEstimate)
        } else {
            Ok(score_sq.sqrt())
        };
        match mapped {
            Ok(r) if r > 0.0 => {
                if seen.insert(r.to_bits()) {
                    points.push(EdrPoint {
                        column,
                        ridge_tuning: t,
                        edr_tuning: r,
                        estimate_norm,
                    });
                } else {
                    warnings.push(format!("t = {t:e}: mapped r = {r:e} duplicates a smaller t, dropped"));
                }
            }
            Ok(r) => warnings.push(format!("t = {t:e}: mapped r = {r:e} is not positive, dropped")),
            Err(Error::ZeroEstimate) => {
                warnings.push(format!("t = {t:e}: zero estimate, dropped"));
            }
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyPath);
    }
    Ok(EdrPath {
        ridge: path,
        points,
        warnings,
    })
}

impl EdrPath {
    pub fn points(&self) -> &[EdrPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ridge_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ridge_tuning).collect()
    }

    pub fn edr_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.edr_tuning).collect()
    }

    /// `β̂_edr(rᵢ)`, the same vector as the ridge estimate at `tᵢ`.
    pub fn estimate(&self, i: usize) -> DVectorView<'_, f64> {
        self.ridge.estimate(self.points[i].column)
    }

    pub fn ridge_path(&self) -> &RidgePath {
        &self.ridge
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `zᵀβ̂ᵢ` for every retained point.
    pub fn projections(&self, z: &DVector<f64>) -> Vec<f64> {
        let all = self.ridge.estimates().tr_mul(z);
        self.points.iter().map(|p| all[p.column]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TuningGrid;
    use crate::linalg::DesignMatrix;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, p: usize, seed: u64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        RegressionProblem::new(DesignMatrix::normalize_columns(x).unwrap(), y).unwrap()
    }

    fn orthonormal_problem(n: usize, seed: u64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        RegressionProblem::new(DesignMatrix::new(q).unwrap(), y).unwrap()
    }

    #[test]
    fn orthonormal_design_closed_form() {
        let problem = orthonormal_problem(8, 1);
        let t = 0.35;
        let xty = problem.x.values().tr_mul(&problem.y);
        let estimate = &xty / (1.0 + t);
        let r = map_tuning(t, &estimate, &problem).unwrap();
        let expected = 2.0 * t * xty.norm() / (1.0 + t);
        assert!((r - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn zero_response_is_degenerate() {
        let mut problem = random_problem(6, 4, 2);
        problem.y.fill(0.0);
        let estimate = DVector::zeros(4);
        assert!(matches!(
            map_tuning(1.0, &estimate, &problem),
            Err(Error::ZeroEstimate)
        ));
        let grid = TuningGrid::ridge(vec![0.1, 1.0]).unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        assert!(matches!(build_edr_path(path, &problem), Err(Error::EmptyPath)));
    }

    #[test]
    fn two_formulas_agree() {
        let problem = random_problem(15, 30, 3);
        let t = 0.7;
        let grid = TuningGrid::ridge(vec![t]).unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        let estimate = path.estimate(0).into_owned();
        let r = map_tuning(t, &estimate, &problem).unwrap();
        // independent route: explicit residual, explicit gradient
        let x = problem.x.values();
        let gradient = 2.0 * x.transpose() * (&problem.y - x * &estimate);
        let direct = gradient.norm();
        let closed = mapped_tuning_closed_form(t, &estimate);
        assert!((r - direct).abs() <= 1e-8 * direct);
        assert!((r - closed).abs() <= 1e-8 * closed);
    }

    #[test]
    fn single_point_path() {
        let problem = random_problem(10, 5, 4);
        let grid = TuningGrid::ridge(vec![2.0]).unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        let edr = build_edr_path(path, &problem).unwrap();
        assert_eq!(edr.len(), 1);
        assert_eq!(edr.points()[0].ridge_tuning, 2.0);
    }

    #[test]
    fn cardinality_and_kkt() {
        let problem = random_problem(12, 25, 5);
        let grid = TuningGrid::ridge((0..40).map(|i| 10f64.powf(-3.0 + i as f64 * 0.15)).collect())
            .unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        let edr = build_edr_path(path, &problem).unwrap();
        assert_eq!(edr.len(), 40);
        assert!(edr.warnings().is_empty());
        for (i, point) in edr.points().iter().enumerate() {
            let residual = kkt_residual(&edr.estimate(i), point.edr_tuning, &problem);
            assert!(residual <= 1e-6 * point.edr_tuning, "point {i}: {residual}");
        }
        // mapping is increasing in t
        for w in edr.edr_grid().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn duplicate_grid_points_are_deduplicated() {
        let problem = random_problem(10, 5, 6);
        let grid = TuningGrid::ridge(vec![1.0, 1.0, 2.0]).unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        let edr = build_edr_path(path, &problem).unwrap();
        assert_eq!(edr.len(), 2);
        assert_eq!(edr.points()[0].column, 0);
        assert_eq!(edr.warnings().len(), 1);
    }

    #[test]
    fn objective_special_cases() {
        let problem = random_problem(20, 4, 7);
        let zero = DVector::zeros(4);
        assert!((edr_objective(&zero, 3.0, &problem) - problem.y.norm_squared()).abs() < 1e-12);
        let x = problem.x.values();
        let least_squares = (x.transpose() * x)
            .lu()
            .solve(&x.tr_mul(&problem.y))
            .unwrap();
        let rss = (&problem.y - x * &least_squares).norm_squared();
        assert!((edr_objective(&least_squares, 0.0, &problem) - rss).abs() < 1e-10);
    }

    #[test]
    fn mapped_estimate_minimizes_objective() {
        let problem = random_problem(15, 30, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let grid = TuningGrid::ridge(vec![0.05, 0.7, 9.0]).unwrap();
        let path = RidgePath::fit(&problem.x, &problem.y, grid).unwrap();
        let edr = build_edr_path(path, &problem).unwrap();
        for (i, point) in edr.points().iter().enumerate() {
            let beta = edr.estimate(i).into_owned();
            let best = edr_objective(&beta, point.edr_tuning, &problem);
            for scale in [0.99, 1.01] {
                assert!(best <= edr_objective(&(&beta * scale), point.edr_tuning, &problem));
            }
            for k in 0..1000 {
                let v = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0)).normalize();
                let eps = [1e-3, -1e-3, 1e-2, -1e-2, 1.0, 10.0][k % 6];
                let other = edr_objective(&(&beta + &v * eps), point.edr_tuning, &problem);
                assert!(best <= other + 1e-12 * best.abs(), "point {i}, eps {eps}");
            }
        }
    }
}
