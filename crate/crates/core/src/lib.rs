//! Subgroup-level auditing of training-data additions.
//!
//! The crate measures how adding data from external sources changes a fixed
//! classifier's accuracy, AUC and mean discrepancy on each subgroup of a
//! target population, and implements the source-selection heuristics,
//! experiment protocols and post-hoc isotonic calibration comparison used to
//! study those changes.

pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod protocols;
pub mod reporting;
pub mod seeding;
pub mod selection;
pub mod similarity;
pub mod synth;

pub use error::{AuditError, Result};
