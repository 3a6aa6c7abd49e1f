//! Personalized adaptive validation (PAV) of the edr tuning parameter.
//!
//! For a subject `z` every grid point `r` carries the bound
//! `c_z(r)·r·‖z‖₂`, where `c_z(r) = |zᵀβ̂(r)| / (‖z‖₂‖β̂(r)‖₂)`. Points are
//! sorted by `c_z(r)·r` and scanned from the top: a point is admissible when
//! its prediction stays within the summed bounds of every point above it.
//! The selected tuning parameter is the admissible point with the smallest
//! bound.

use nalgebra::{DMatrix, DVector, Dyn, Storage, Vector};
use serde::{Deserialize, Serialize};

use crate::datagen::RegressionProblem;
use crate::error::{Error, Result};
use crate::mapping::{EdrPath, ZERO_ESTIMATE_NORM};

/// Covariates of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectQuery {
    z: DVector<f64>,
    norm: f64,
}

impl SubjectQuery {
    pub fn new(z: DVector<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSubject);
        }
        let norm = z.norm();
        if !(norm > ZERO_ESTIMATE_NORM) {
            return Err(Error::InvalidSubject);
        }
        Ok(Self { z, norm })
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// `|zᵀβ̂| / (‖z‖₂‖β̂‖₂)`, clamped to `[0, 1]`.
pub fn correlation_factor<S: Storage<f64, Dyn>>(
    z: &SubjectQuery,
    estimate: &Vector<f64, Dyn, S>,
) -> Result<f64> {
    if estimate.len() != z.z.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {}, subject has {}",
            estimate.len(),
            z.z.len()
        )));
    }
    let norm = estimate.norm();
    if norm < ZERO_ESTIMATE_NORM {
        return Err(Error::ZeroEstimate);
    }
    Ok(cosine(z.z.dot(estimate), z.norm, norm))
}

fn cosine(projection: f64, norm_z: f64, norm_estimate: f64) -> f64 {
    (projection.abs() / (norm_z * norm_estimate)).clamp(0.0, 1.0)
}

/// One grid point as seen by a particular subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Index into the edr path.
    pub point: usize,
    pub edr_tuning: f64,
    pub ridge_tuning: f64,
    /// `c_z(r)`.
    pub correlation: f64,
    /// `c_z(r)·r`.
    pub weighted_tuning: f64,
    /// `zᵀβ̂(r)`.
    pub prediction: f64,
}

/// Grid points ordered by nondecreasing `c_z(r)·r`; ties go to the smaller
/// `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    entries: Vec<ScheduleEntry>,
    norm_z: f64,
}

pub fn sort_schedule(path: &EdrPath, z: &SubjectQuery) -> Schedule {
    schedule_from_projections(path, path.projections(&z.z), z.norm)
}

fn schedule_from_projections(path: &EdrPath, predictions: Vec<f64>, norm_z: f64) -> Schedule {
    let mut entries: Vec<ScheduleEntry> = path
        .points()
        .iter()
        .zip(predictions)
        .enumerate()
        .filter(|(_, (point, _))| point.estimate_norm >= ZERO_ESTIMATE_NORM)
        .map(|(i, (point, prediction))| {
            let correlation = cosine(prediction, norm_z, point.estimate_norm);
            ScheduleEntry {
                point: i,
                edr_tuning: point.edr_tuning,
                ridge_tuning: point.ridge_tuning,
                correlation,
                weighted_tuning: correlation * point.edr_tuning,
                prediction,
            }
        })
        .collect();
    order_entries(&mut entries);
    Schedule { entries, norm_z }
}

fn order_entries(entries: &mut [ScheduleEntry]) {
    entries.sort_unstable_by(|a, b| {
        a.weighted_tuning
            .total_cmp(&b.weighted_tuning)
            .then(a.edr_tuning.total_cmp(&b.edr_tuning))
    });
}

impl Schedule {
    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm_z(&self) -> f64 {
        self.norm_z
    }

    /// Pairwise test between schedule positions `i` and `j`:
    /// `|zᵀ(β̂ᵢ − β̂ⱼ)| − (cᵢrᵢ + cⱼrⱼ)‖z‖₂ ≤ 0`.
    pub fn pairwise_test(&self, i: usize, j: usize) -> bool {
        let (a, b) = (&self.entries[i], &self.entries[j]);
        (a.prediction - b.prediction).abs() - (a.weighted_tuning + b.weighted_tuning) * self.norm_z
            <= 0.0
    }

    /// `ŝᵢ`: position `i` passes the test against itself and every later
    /// position.
    pub fn passes_above(&self, i: usize) -> bool {
        (i..self.entries.len()).all(|j| self.pairwise_test(i, j))
    }
}

/// Downward scan that decides `ŝᵢ` in O(1) per position from running
/// extrema of `aⱼ ± wⱼ` over the positions above, where `wⱼ = cⱼrⱼ‖z‖₂`.
/// Positions within rounding distance of the envelope fall back to the
/// pairwise tests, so the outcome is always that of [`Schedule::passes_above`].
struct Envelope<'a> {
    schedule: &'a Schedule,
    lowest_upper: f64,
    highest_lower: f64,
}

impl<'a> Envelope<'a> {
    fn new(schedule: &'a Schedule) -> Self {
        Self {
            schedule,
            lowest_upper: f64::INFINITY,
            highest_lower: f64::NEG_INFINITY,
        }
    }

    /// `ŝᵢ`; positions must be visited from the top down.
    fn passes(&mut self, i: usize) -> bool {
        let entry = &self.schedule.entries[i];
        let (a, w) = (entry.prediction, entry.weighted_tuning * self.schedule.norm_z);
        self.lowest_upper = self.lowest_upper.min(a + w);
        self.highest_lower = self.highest_lower.max(a - w);
        let slack = 1e-9 * (a.abs() + w + self.lowest_upper.abs() + self.highest_lower.abs());
        let below = a - w - self.lowest_upper;
        let above = self.highest_lower - a - w;
        if below <= -slack && above <= -slack {
            true
        } else if below > slack || above > slack {
            false
        } else {
            self.schedule.passes_above(i)
        }
    }
}

/// How the admissible set is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Downward scan with early exit, testing each position against the
    /// positions above it.
    #[default]
    Algorithm1,
    /// Every `ŝ` evaluated, admissible set formed explicitly over all pairs
    /// above a position, then the bound minimized over that set.
    Definition2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PavSelection {
    /// Position of the chosen point in the schedule.
    pub schedule_index: usize,
    /// Index of the chosen point in the edr path.
    pub point: usize,
    pub chosen_r: f64,
    pub chosen_t: f64,
    pub schedule: Schedule,
    /// `ŝ` per schedule position; `None` where the scan stopped before
    /// evaluating it.
    pub admissible_flags: Vec<Option<bool>>,
    /// `zᵀβ̂(r̂)`.
    pub prediction: f64,
    /// `c_z(r̂)·r̂·‖z‖₂`.
    pub bound: f64,
}

pub fn select_tuning(path: &EdrPath, z: &SubjectQuery, mode: SelectionMode) -> Result<PavSelection> {
    let schedule = sort_schedule(path, z);
    select_from_schedule(schedule, mode)
}

/// Selects for many subjects at once; all projections `zᵀβ̂` come from a
/// single matrix product.
pub fn select_tuning_many(
    path: &EdrPath,
    subjects: &[SubjectQuery],
    mode: SelectionMode,
) -> Result<Vec<PavSelection>> {
    if subjects.is_empty() {
        return Ok(Vec::new());
    }
    let p = path.ridge_path().estimates().nrows();
    if let Some(bad) = subjects.iter().find(|z| z.z.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "subject has length {}, estimates have {p}",
            bad.z.len()
        )));
    }
    let stacked = DMatrix::from_fn(subjects.len(), p, |i, j| subjects[i].z[j]);
    let all = stacked * path.ridge_path().estimates();
    subjects
        .iter()
        .enumerate()
        .map(|(s, z)| {
            let predictions = path.points().iter().map(|pt| all[(s, pt.column)]).collect();
            select_from_schedule(schedule_from_projections(path, predictions, z.norm), mode)
        })
        .collect()
}

pub fn select_from_schedule(schedule: Schedule, mode: SelectionMode) -> Result<PavSelection> {
    let m = schedule.len();
    if m == 0 {
        return Err(Error::EmptyPath);
    }
    let mut flags = vec![None; m];
    let chosen = match mode {
        SelectionMode::Algorithm1 => {
            // The scan stops on the failing position; the choice is the one
            // just above it.
            let mut envelope = Envelope::new(&schedule);
            let mut i = m - 1;
            loop {
                let passed = envelope.passes(i);
                flags[i] = Some(passed);
                if !passed {
                    break i + 1;
                }
                if i == 0 {
                    break 0;
                }
                i -= 1;
            }
        }
        SelectionMode::Definition2 => {
            let mut admissible = vec![false; m];
            let mut all_above = true;
            let mut envelope = Envelope::new(&schedule);
            for i in (0..m).rev() {
                let passed = envelope.passes(i);
                flags[i] = Some(passed);
                all_above &= passed;
                admissible[i] = all_above;
            }
            let entries = schedule.entries();
            (0..m)
                .filter(|&i| admissible[i])
                .min_by(|&a, &b| {
                    entries[a]
                        .weighted_tuning
                        .total_cmp(&entries[b].weighted_tuning)
                        .then(a.cmp(&b))
                })
                .expect("the top position is always admissible")
        }
    };
    let entry = schedule.entries[chosen];
    Ok(PavSelection {
        schedule_index: chosen,
        point: entry.point,
        chosen_r: entry.edr_tuning,
        chosen_t: entry.ridge_tuning,
        admissible_flags: flags,
        prediction: entry.prediction,
        bound: entry.weighted_tuning * schedule.norm_z,
        schedule,
    })
}

/// Oracle quantities that need the true noise and coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDiagnostics {
    pub r_oracle: f64,
    pub t_oracle: f64,
    /// Index of the oracle point in the edr path.
    pub point: usize,
    /// `2|(Xz)ᵀu|`.
    pub noise_term: f64,
    /// `2|(Xz)ᵀu| / (c_z(r)‖z‖₂)` per edr path point; infinite where
    /// `c_z(r) = 0`.
    pub lower_bound_rhs: Vec<f64>,
    /// Whether each edr path point meets its lower bound.
    pub meets_lower_bound: Vec<bool>,
    /// `c_z(r_o)·r_o·‖z‖₂`.
    pub oracle_bound: f64,
    /// `|zᵀ(β* − β̂(r̂))|` for the supplied selection.
    pub selected_error: f64,
    /// `selected_error / oracle_bound`; at most 3 under orthonormal design.
    pub optimality_ratio: f64,
}

/// Oracle tuning parameter: smallest `c_z(r)·r` among points with
/// `r ≥ 2|(Xz)ᵀu| / (c_z(r)‖z‖₂)`.
pub fn oracle_tuning(
    path: &EdrPath,
    z: &SubjectQuery,
    problem: &RegressionProblem,
    selection: &PavSelection,
) -> Result<OracleDiagnostics> {
    let truth = problem.truth.as_ref().ok_or(Error::MissingTruth)?;
    let noise_term = 2.0 * (problem.x.values() * &z.z).dot(&truth.noise).abs();
    let schedule = &selection.schedule;
    let mut lower_bound_rhs = vec![f64::INFINITY; path.len()];
    let mut meets = vec![false; path.len()];
    let mut best: Option<&ScheduleEntry> = None;
    for entry in schedule.entries() {
        let scaled = entry.correlation * z.norm;
        lower_bound_rhs[entry.point] = if scaled > 0.0 {
            noise_term / scaled
        } else if noise_term == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        // r ≥ 2|(Xz)ᵀu| / (c‖z‖), multiplied through by c‖z‖ ≥ 0
        let ok = entry.weighted_tuning * z.norm >= noise_term;
        meets[entry.point] = ok;
        if ok && best.is_none_or(|b| entry.weighted_tuning < b.weighted_tuning) {
            best = Some(entry);
        }
    }
    let oracle = best.ok_or(Error::NoAdmissiblePoint)?;
    let oracle_bound = oracle.weighted_tuning * z.norm;
    let selected_error = personalized_error(&z.z, &truth.beta, &path.estimate(selection.point));
    let optimality_ratio = if oracle_bound > 0.0 {
        selected_error / oracle_bound
    } else if selected_error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(OracleDiagnostics {
        r_oracle: oracle.edr_tuning,
        t_oracle: oracle.ridge_tuning,
        point: oracle.point,
        noise_term,
        lower_bound_rhs,
        meets_lower_bound: meets,
        oracle_bound,
        selected_error,
        optimality_ratio,
    })
}

/// `|zᵀ(β* − β̂)|`.
pub fn personalized_error<S: Storage<f64, Dyn>>(
    z: &DVector<f64>,
    beta_star: &DVector<f64>,
    estimate: &Vector<f64, Dyn, S>,
) -> f64 {
    (z.dot(beta_star) - z.dot(estimate)).abs()
}

/// High-probability error bound under orthonormal design and
/// `u ~ N(0, σ²I/n)`: `3σ√(8 log(2/δ)/n)·‖z‖₂`.
pub fn gaussian_bound(sigma: f64, n: usize, delta: f64, norm_z: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    Ok(3.0 * sigma * (8.0 * (2.0 / delta).ln() / n as f64).sqrt() * norm_z)
}

/// Ridge counterpart of the oracle bound, for diagnostics only. Under
/// orthonormal design and `t ≥ |(Xz)ᵀu| / ‖z‖₂`,
/// `|zᵀ(β* − β̂_ridge(t))| ≤ t·(‖z‖₂ + |zᵀβ̂_ridge(t)|)`. Returns `None` when
/// `t` is below the threshold.
pub fn ridge_oracle_bound<S: Storage<f64, Dyn>>(
    t: f64,
    estimate: &Vector<f64, Dyn, S>,
    z: &SubjectQuery,
    problem: &RegressionProblem,
) -> Result<Option<f64>> {
    let truth = problem.truth.as_ref().ok_or(Error::MissingTruth)?;
    let threshold = (problem.x.values() * &z.z).dot(&truth.noise).abs() / z.norm;
    if t < threshold {
        return Ok(None);
    }
    Ok(Some(t * (z.norm + z.z.dot(estimate).abs())))
}
