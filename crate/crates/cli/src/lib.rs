//! Orchestration around `sysid-core`: run configs, the basic and
//! comprehensive identification pipelines, synthetic plant data from the
//! model zoo, run artifacts and step-response emission.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod seeds;
pub mod steps;
pub mod synth;

pub use config::RunConfig;
pub use error::{PipelineError, Result};
