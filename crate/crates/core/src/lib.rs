//! Sparse kernel NAF Q-learning with density-arbitrated policy composition.
//!
//! - [`rkhs`]: Gaussian kernels and sparse kernel expansions.
//! - [`komp`]: greedy destructive compression within a Hilbert-norm budget.
//! - [`knaf`]: the online learner and its policy type.
//! - [`compose`]: merging several trained policies into one.
//! - [`lidar_sim`]: the 2D range-finder robot used for evaluation.
//! - [`harness`]: policy files, evaluation and cross-validation.

pub mod compose;
pub mod error;
pub mod harness;
pub mod knaf;
pub mod komp;
pub mod lidar_sim;
pub mod rkhs;

pub use error::{Error, Result};
