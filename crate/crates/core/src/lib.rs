//! Fairness-aware linear regression under worst-case data poisoning.
//!
//! Two attack models are supported: a single inserted point of bounded
//! energy, and a rank-one perturbation of the feature matrix with bounded
//! Frobenius norm. For each, the crate computes the optimal attack against a
//! given model and fits a model minimizing the worst-case loss.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod point_attack;
pub mod point_defense;
pub mod rankone_attack;
pub mod rankone_defense;
pub mod search;
mod serde_vec;

pub use error::{Error, Result};
