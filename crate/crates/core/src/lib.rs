//! Scalar-on-function semiparametric regression.
//!
//! This crate estimates regression models in which a scalar response is
//! driven by functional predictors (curves observed on a common grid),
//! possibly together with scalar covariates:
//!
//! - functional single-index models, fit by joint grid search over
//!   candidate directions or by an iterative simplex refinement
//!   ([`fsim`]);
//! - semi-functional partial linear models with penalized variable
//!   selection in the linear part ([`plm`], [`penalty`]);
//! - impact-point selection for discretized functional predictors via
//!   partitioned two-step selection ([`impact`]).
//!
//! Smoothing is kernel- or k-nearest-neighbour-based throughout
//! ([`smooth`]), with projection, derivative, and functional-PCA
//! semimetrics between curves ([`metrics`]) and B-spline representations
//! of both curves and index directions ([`basis`]).

pub mod basis;
pub mod error;
pub mod fsim;
pub mod impact;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod penalty;
pub mod plm;
pub mod predict;
pub mod quad;
pub mod rng;
pub mod smooth;
pub mod synth;

pub use error::{FsrError, Result};
