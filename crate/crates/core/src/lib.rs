//! Euclidean-distance ridge (edr) estimation with personalized adaptive
//! validation (PAV) of the tuning parameter.
//!
//! The pipeline computes one ridge solution path through a single SVD of
//! the design, relabels it on the edr scale, and then picks a tuning
//! parameter per subject by pairwise tests along the path. A K-fold
//! cross-validation baseline and simulation/real-data experiment drivers
//! are included for comparison.
//!
//! - [`linalg`]: column normalization, SVD, ridge paths
//! - [`mapping`]: ridge ↔ edr tuning bijection and edr optimality checks
//! - [`pav`]: per-subject selection and oracle diagnostics
//! - [`cv`]: K-fold cross-validation
//! - [`datagen`]: problem model, simulation, file ingestion
//! - [`experiments`]: end-to-end studies and reports
//! - [`cli`]: command-line front end

pub mod cv;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mapping;
pub mod pav;
pub mod experiments;
pub mod cli;

pub use error::{Error, Result};
