//! K-fold cross-validation baseline for the ridge tuning parameter.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::RegressionProblem;
use crate::error::{Error, Result};
use crate::grid::TuningGrid;
use crate::linalg::{factorization_count, RidgePath};

/// Balanced random assignment of `n` samples to `K` folds (zero-based
/// labels). Fold sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: usize,
    assignments: Vec<usize>,
    seed: u64,
}

pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidFolds { folds, samples: n });
    }
    let mut assignments: Vec<usize> = (0..n).map(|i| i % folds).collect();
    assignments.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(FoldPlan {
        folds,
        assignments,
        seed,
    })
}

impl FoldPlan {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub t_cv: f64,
    /// Grid index of `t_cv`.
    pub index: usize,
    /// Held-out mean squared error per grid point, averaged over folds.
    pub mean_errors: Vec<f64>,
    /// Design factorizations performed; equals the fold count.
    pub factorizations: usize,
}

/// Fits a ridge path on each training split (one factorization per fold)
/// and picks the grid point with the smallest fold-averaged held-out MSE.
/// Ties go to the smaller `t`.
pub fn cv_select(problem: &RegressionProblem, grid: &TuningGrid, plan: &FoldPlan) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if plan.len() != problem.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} samples, problem has {}",
            plan.len(),
            problem.nrows()
        )));
    }
    let before = factorization_count();
    let mut totals = vec![0.0; grid.len()];
    for fold in 0..plan.folds() {
        let held = plan.held_out(fold);
        if held.is_empty() {
            return Err(Error::EmptyFold { fold });
        }
        let train = problem.select_rows(&plan.training(fold));
        let test = problem.select_rows(&held);
        let path = RidgePath::fit(&train.x, &train.y, grid.clone())?;
        let predictions = test.x.values() * path.estimates();
        for (i, column) in predictions.column_iter().enumerate() {
            let mse = (column - &test.y).norm_squared() / held.len() as f64;
            totals[i] += mse;
        }
    }
    let folds = plan.folds() as f64;
    let mean_errors: Vec<f64> = totals.into_iter().map(|t| t / folds).collect();
    let index = mean_errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    Ok(CvOutcome {
        t_cv: grid.values()[index],
        index,
        mean_errors,
        factorizations: factorization_count() - before,
    })
}
