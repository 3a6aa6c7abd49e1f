//! Candidate tuning parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which estimator a grid of tuning parameters belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuningScale {
    /// Squared-norm penalty `t‖β‖²`.
    Ridge,
    /// Unsquared-norm penalty `r‖β‖`.
    Edr,
}

/// Ordered, strictly positive candidate tuning parameters.
///
/// Values are kept sorted ascending. Duplicates are allowed; they produce
/// duplicate columns in a ridge path.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    values: Vec<f64>,
    scale: TuningScale,
}

impl TuningGrid {
    pub fn new(mut values: Vec<f64>, scale: TuningScale) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonpositiveTuning(bad));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, scale })
    }

    pub fn ridge(values: Vec<f64>) -> Result<Self> {
        Self::new(values, TuningScale::Ridge)
    }

    /// `count` ridge tuning parameters `10^q`, with `q` equispaced on
    /// `[min_log10, max_log10]` including both endpoints.
    pub fn log_spaced(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let span = spec.max_log10 - spec.min_log10;
        let last = (spec.count - 1) as f64;
        let values = (0..spec.count)
            .map(|i| 10f64.powf(spec.min_log10 + span * i as f64 / last))
            .collect();
        Self::ridge(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> TuningScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Log-equispaced grid description, as stored in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub min_log10: f64,
    pub max_log10: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            count: 300,
            min_log10: -5.0,
            max_log10: 5.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid count must be at least 2, got {}",
                self.count
            )));
        }
        if !(self.min_log10.is_finite() && self.max_log10.is_finite())
            || self.min_log10 >= self.max_log10
        {
            return Err(Error::InvalidGrid(format!(
                "log10 range [{}, {}] is empty or not finite",
                self.min_log10, self.max_log10
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_endpoints() {
        let grid = TuningGrid::log_spaced(&GridSpec::default()).unwrap();
        assert_eq!(grid.len(), 300);
        assert_eq!(grid.values()[0], 1e-5);
        assert_eq!(grid.values()[299], 1e5);
        // log-equispaced: constant ratio between neighbours
        let ratio = 10f64.powf(10.0 / 299.0);
        for w in grid.values().windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_is_sorted() {
        let grid = TuningGrid::ridge(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(grid.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(TuningGrid::ridge(vec![]), Err(Error::EmptyGrid)));
        assert!(matches!(
            TuningGrid::ridge(vec![1.0, 0.0]),
            Err(Error::NonpositiveTuning(_))
        ));
        assert!(matches!(
            TuningGrid::ridge(vec![f64::NAN]),
            Err(Error::NonpositiveTuning(_))
        ));
        let spec = GridSpec {
            count: 1,
            ..GridSpec::default()
        };
        assert!(TuningGrid::log_spaced(&spec).is_err());
    }
}
