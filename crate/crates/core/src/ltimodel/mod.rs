//! Continuous-time process models and their sampled-data simulation.
//!
//! A [`MisoModel`] is a sum of single-input [`ProcessModel`] paths. Each path
//! is discretized exactly under a zero-order hold at the data rate; dead time
//! becomes an integer-sample delay.

mod band;
mod composite;
mod io;
mod process;
pub mod zoo;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Channel;

pub use band::{output_confidence_band, ConfidenceBand};
pub use composite::{chain_subprocesses, AlgebraicLink, Composite, CompositeNode};
pub use io::{ModelFile, Scaling};
pub use process::{ProcessModel, MAX_POLES};
pub(crate) use process::{DiscretePath, PathStart};

/// Upper bound on any identified time constant, in seconds.
pub const T_P_MAX: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model input `{0}` has no matching signal")]
    MissingInput(String),
    #[error("input `{0}` contains non-finite samples")]
    NonFiniteInput(String),
    #[error("input `{name}` has {got} samples, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("sample period must be positive, got {0}")]
    InvalidSamplePeriod(f64),
    #[error("model carries no parameter covariance")]
    NoCovariance,
    #[error("subprocess graph contains a cycle through `{0}`")]
    CyclicDependency(String),
    #[error("signal `{0}` is neither an external input nor produced by any stage")]
    MissingLinkSignal(String),
    #[error("no scaling defined for variable `{0}`")]
    UnknownVariable(String),
    #[error("algebraic link failed: {0}")]
    Link(String),
    #[error("model file: {0}")]
    Format(String),
}

/// Named signals that a model can draw its inputs from.
pub trait SignalSource {
    fn signal(&self, name: &str) -> Option<&[f64]>;
}

impl SignalSource for [Channel] {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        self.iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }
}

impl SignalSource for Vec<Channel> {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        self.as_slice().signal(name)
    }
}

impl SignalSource for BTreeMap<String, Vec<f64>> {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        self.get(name).map(Vec::as_slice)
    }
}

/// Initial condition of every path at the first sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// All filter states and delay lines at zero (model coordinates).
    #[default]
    Zero,
    /// Each path starts at the equilibrium of its first input sample.
    SteadyState,
    /// Explicit per-path filter states, in path order.
    Given(Vec<Vec<f64>>),
}

impl InitialState {
    pub(crate) fn path_start(&self, path: usize) -> PathStart<'_> {
        match self {
            InitialState::Zero => PathStart::Zero,
            InitialState::SteadyState => PathStart::Steady,
            InitialState::Given(states) => states
                .get(path)
                .map(|s| PathStart::Given(s.as_slice()))
                .unwrap_or(PathStart::Zero),
        }
    }
}

/// One input-output path of a [`MisoModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPath {
    pub input: String,
    /// Identification stage that introduced this path (1-based).
    pub stage: u8,
    #[serde(flatten)]
    pub process: ProcessModel,
}

/// Multi-input single-output model: the output is the sum of all paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisoModel {
    pub output: String,
    pub paths: Vec<ModelPath>,
    /// Covariance over [`MisoModel::parameter_vector`], row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl MisoModel {
    pub fn new(output: impl Into<String>) -> Self {
        Self {
            output: output.into(),
            paths: Vec::new(),
            covariance: None,
        }
    }

    pub fn with_path(mut self, input: impl Into<String>, process: ProcessModel) -> Self {
        self.paths.push(ModelPath {
            input: input.into(),
            stage: 1,
            process,
        });
        self
    }

    pub fn inputs(&self) -> impl Iterator<Item = &str> {
        self.paths.iter().map(|p| p.input.as_str())
    }

    pub fn path(&self, input: &str) -> Option<&ModelPath> {
        self.paths.iter().find(|p| p.input == input)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for p in &self.paths {
            p.process.validate()?;
        }
        if let Some(cov) = &self.covariance {
            let n = self.parameter_count();
            if cov.len() != n || cov.iter().any(|r| r.len() != n) {
                return Err(ModelError::InvalidParameter(format!(
                    "covariance must be {n}x{n}"
                )));
            }
        }
        Ok(())
    }

    /// Number of parameters: one gain plus one time constant per pole, per path.
    pub fn parameter_count(&self) -> usize {
        self.paths.iter().map(|p| 1 + p.process.pole_count()).sum()
    }

    /// `[K, T_1.., K, T_1.., ...]` in path order. Dead times are structural
    /// and not part of the vector.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for p in &self.paths {
            v.push(p.process.gain);
            v.extend_from_slice(&p.process.time_constants);
        }
        v
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.parameter_count());
        for p in &self.paths {
            names.push(format!("{}.K", p.input));
            for i in 0..p.process.pole_count() {
                names.push(format!("{}.T{}", p.input, i + 1));
            }
        }
        names
    }

    /// Copy of the model with parameters replaced, covariance dropped.
    pub fn with_parameters(&self, theta: &[f64]) -> MisoModel {
        assert_eq!(theta.len(), self.parameter_count());
        let mut out = self.clone();
        out.covariance = None;
        let mut it = theta.iter();
        for p in &mut out.paths {
            p.process.gain = *it.next().unwrap();
            for t in &mut p.process.time_constants {
                *t = *it.next().unwrap();
            }
        }
        out
    }

    /// Simulates every path over aligned input signals and sums them.
    pub fn simulate_source<S: SignalSource + ?Sized>(
        &self,
        source: &S,
        len: usize,
        sample_period: f64,
        initial: &InitialState,
    ) -> Result<Vec<f64>, ModelError> {
        if !(sample_period > 0.0) {
            return Err(ModelError::InvalidSamplePeriod(sample_period));
        }
        let mut total = vec![0.0; len];
        let mut buf = vec![0.0; len];
        for (i, path) in self.paths.iter().enumerate() {
            let u = source
                .signal(&path.input)
                .ok_or_else(|| ModelError::MissingInput(path.input.clone()))?;
            if u.len() != len {
                return Err(ModelError::LengthMismatch {
                    name: path.input.clone(),
                    got: u.len(),
                    expected: len,
                });
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteInput(path.input.clone()));
            }
            path.process
                .discretize(sample_period)
                .run(u, initial.path_start(i), &mut buf);
            let k = path.process.gain;
            for (t, b) in total.iter_mut().zip(&buf) {
                *t += k * b;
            }
        }
        Ok(total)
    }

    /// Simulates the model on a set of aligned channels.
    pub fn simulate(
        &self,
        inputs: &[Channel],
        initial: &InitialState,
    ) -> Result<Channel, ModelError> {
        let first = self
            .paths
            .first()
            .and_then(|p| inputs.iter().find(|c| c.name == p.input))
            .or_else(|| inputs.first())
            .ok_or_else(|| {
                ModelError::MissingInput(
                    self.paths.first().map(|p| p.input.clone()).unwrap_or_default(),
                )
            })?;
        let h = first.sample_period;
        let values = self.simulate_source(inputs, first.values.len(), h, initial)?;
        Ok(Channel {
            name: self.output.clone(),
            unit: String::new(),
            values,
            sample_period: h,
        })
    }

    /// Response to `amplitude` times a unit step on `input` applied at t = 0,
    /// all other inputs held at zero, from a zero state.
    pub fn step_response(
        &self,
        input: &str,
        amplitude: f64,
        horizon: f64,
        sample_period: f64,
    ) -> Result<Channel, ModelError> {
        if self.path(input).is_none() {
            return Err(ModelError::MissingInput(input.to_string()));
        }
        if !(sample_period > 0.0) {
            return Err(ModelError::InvalidSamplePeriod(sample_period));
        }
        if !(horizon > 0.0) {
            return Err(ModelError::InvalidParameter(format!("horizon {horizon}")));
        }
        let n = (horizon / sample_period).round() as usize + 1;
        let mut signals = BTreeMap::new();
        for name in self.inputs() {
            let v = if name == input { amplitude } else { 0.0 };
            signals.insert(name.to_string(), vec![v; n]);
        }
        let values = self.simulate_source(&signals, n, sample_period, &InitialState::Zero)?;
        Ok(Channel {
            name: self.output.clone(),
            unit: String::new(),
            values,
            sample_period,
        })
    }
}
