//! Identification of low-order continuous-time process models from disturbed
//! closed-loop plant data.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: sampled channels, CSV ingestion, standardization, splitting
//!   a record into experiments and assigning train/test groups and folds.
//! - [`plant`]: grate-incineration preprocessing (ram feeder to fuel flow,
//!   steam power, flue-gas mass balance, the `Gamma` product) and the
//!   offset/reference variable convention.
//! - [`ltimodel`]: process models (gain, up to three real poles, dead time),
//!   multi-input sums of them, sampled-data simulation, step responses,
//!   confidence bands, subprocess chaining and the published model zoo.
//! - [`estimator`]: regularized multi-start Levenberg-Marquardt fitting,
//!   staged (sequential) identification, covariance and fit metrics.
//! - [`hypertune`]: hyperparameter space, K-fold objective, Gaussian-process
//!   surrogate with ARD Matern 5/2 kernel, Expected Improvement and the
//!   Bayesian optimization loop.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod estimator;
pub mod hypertune;
pub mod ltimodel;
pub mod plant;

mod linalg;

pub use dataset::{Channel, ExperimentSet, Group, Record, Standardizer};
pub use estimator::{
    mse, r_squared, staged_fit, ExperimentData, FitObjective, FitResult, ModelTemplate,
    PathTemplate, StageSpec,
};
pub use hypertune::{HyperParams, HyperSpace, ObservationSet};
pub use ltimodel::{InitialState, MisoModel, ModelPath, ProcessModel, Scaling, T_P_MAX};
pub use plant::{FlueGasComposition, VariableConvention};
