//! Consistent cross-view matching for unsupervised tracklet association.
//!
//! The crate clusters tracklets inside each camera, matches clusters across
//! every camera pair, filters the matches by their agreement with the rest
//! of the camera network, and learns one Mahalanobis metric per camera pair
//! from the surviving matches. [`pipeline::run_pipeline`] alternates the
//! last three stages until the assignments stop improving.

pub mod cluster;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hungarian;
pub mod learn;
pub mod matching;
pub mod metric;
pub mod pipeline;

#[cfg(test)]
mod testutil;

pub use error::{CcmError, Result};
