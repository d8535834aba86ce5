//! Poisson multi-Bernoulli mixture (PMBM) multi-object tracking for
//! point detections with confidence scores.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations. File formats and the batch pipeline
//! work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod error;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod sim;
pub mod state;

pub use assignment::{brute_force_kbest, hungarian, murty_kbest, Assignment, CostMatrix};
pub use error::{Error, Result};
pub use filter::{
    birth_grid, build_cost_matrix, extract_estimates, pmbm_predict, pmbm_reduce, pmbm_update,
    FilterParams, GlobalHypothesis, PmbmState, PoissonComponent, Rect, SingleTargetHypothesis,
    TrackEstimate, TrackId, TrackTree,
};
pub use metrics::{evaluate_per_class, evaluate_sequence, AnnotatedFrame, MotSummary};
pub use scalar::Scalar;
pub use state::{
    cv_predict, gate, kalman_update, mahalanobis_sq, Measurement, MeasurementParams, MotionParams,
    StateEstimate,
};

pub type StateEstimate64 = StateEstimate<f64>;
pub type StateEstimate32 = StateEstimate<f32>;
pub type CostMatrix64 = CostMatrix<f64>;
pub type CostMatrix32 = CostMatrix<f32>;
pub type FilterParams64 = FilterParams<f64>;
pub type FilterParams32 = FilterParams<f32>;
pub type PmbmState64 = PmbmState<f64>;
pub type PmbmState32 = PmbmState<f32>;
pub type MotSummary64 = MotSummary<f64>;
