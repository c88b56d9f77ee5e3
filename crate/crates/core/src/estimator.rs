//! Regularized least-squares fitting of [`MisoModel`] parameters.
//!
//! Every path is parameterized by its gain and by `z = log10(T / T_c)` for
//! each time constant, where `T_c` is the geometric centre of the start
//! range. The objective is `sum_i MSE_i + lambda * |theta|^2` over the scaled
//! parameters, minimized by a bounded Levenberg-Marquardt iteration from
//! several deterministic starts.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Record;
use crate::linalg::{inverse_spd, solve_spd};
use crate::ltimodel::{
    DiscretePath, InitialState, MisoModel, ModelError, ModelPath, PathStart, ProcessModel,
    T_P_MAX,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("series lengths differ ({got} vs {expected})")]
    LengthMismatch { got: usize, expected: usize },
    #[error("series is empty")]
    Empty,
    #[error("target is constant, R^2 is undefined")]
    ConstantTarget,
    #[error("the model structure has no free parameters")]
    NoFreeParameters,
    #[error("stage 1 has no inputs")]
    EmptyStageOne,
    #[error("at most 3 stages are supported, got {0}")]
    TooManyStages(usize),
    #[error("no experiments to fit")]
    NoData,
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Mean squared error.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(EstimatorError::LengthMismatch {
            got: y_hat.len(),
            expected: y.len(),
        });
    }
    if y.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let ssr: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ssr / y.len() as f64)
}

/// Population variance (1/N) about the mean.
fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Coefficient of determination `1 - MSE / var(y)`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let e = mse(y, y_hat)?;
    let v = variance(y);
    if !(v > 0.0) {
        return Err(EstimatorError::ConstantTarget);
    }
    Ok(1.0 - e / v)
}

/// R^2 of several series pooled into one.
pub fn pooled_r_squared<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<f64> {
    let mut y = Vec::new();
    let mut y_hat = Vec::new();
    for (a, b) in pairs {
        if a.len() != b.len() {
            return Err(EstimatorError::LengthMismatch {
                got: b.len(),
                expected: a.len(),
            });
        }
        y.extend_from_slice(a);
        y_hat.extend_from_slice(b);
    }
    r_squared(&y, &y_hat)
}

/// One experiment: aligned input signals and the measured output, in model
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub inputs: BTreeMap<String, Vec<f64>>,
    pub output: Vec<f64>,
    pub sample_period: f64,
}

impl ExperimentData {
    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    /// Cuts one window out of a record.
    pub fn from_record(
        record: &Record,
        window: Range<usize>,
        inputs: &[&str],
        output: &str,
    ) -> std::result::Result<Self, crate::dataset::DatasetError> {
        let mut map = BTreeMap::new();
        for name in inputs {
            let c = record.channel(name)?;
            map.insert(name.to_string(), c.values[window.clone()].to_vec());
        }
        Ok(Self {
            inputs: map,
            output: record.channel(output)?.values[window].to_vec(),
            sample_period: record.sample_period,
        })
    }

    fn input(&self, name: &str) -> Result<&[f64]> {
        let u = self
            .inputs
            .get(name)
            .ok_or_else(|| ModelError::MissingInput(name.to_string()))?;
        if u.len() != self.output.len() {
            return Err(ModelError::LengthMismatch {
                name: name.to_string(),
                got: u.len(),
                expected: self.output.len(),
            }
            .into());
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput(name.to_string()).into());
        }
        Ok(u)
    }
}

/// Simulates `model` on every experiment.
pub fn predict(
    model: &MisoModel,
    data: &[ExperimentData],
    initial: &InitialState,
) -> Result<Vec<Vec<f64>>> {
    data.iter()
        .map(|e| {
            model
                .simulate_source(&e.inputs, e.len(), e.sample_period, initial)
                .map_err(Into::into)
        })
        .collect()
}

/// Structure of one path to be fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTemplate {
    pub input: String,
    pub poles: usize,
    /// Held fixed during fitting.
    #[serde(default)]
    pub dead_time: f64,
    #[serde(default = "one")]
    pub stage: u8,
}

fn one() -> u8 {
    1
}

impl PathTemplate {
    pub fn new(input: impl Into<String>, poles: usize) -> Self {
        Self {
            input: input.into(),
            poles,
            dead_time: 0.0,
            stage: 1,
        }
    }

    pub fn in_stage(mut self, stage: u8) -> Self {
        self.stage = stage;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub output: String,
    pub paths: Vec<PathTemplate>,
}

impl ModelTemplate {
    pub fn new(output: impl Into<String>, paths: Vec<PathTemplate>) -> Self {
        Self {
            output: output.into(),
            paths,
        }
    }
}

/// Inputs of one identification stage and its regularization weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub paths: Vec<PathTemplate>,
    pub lambda: f64,
}

/// Optimizer settings and regularization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitObjective {
    pub lambda: f64,
    pub initial: InitialState,
    /// Bounds on every time constant, seconds.
    pub time_constant_bounds: (f64, f64),
    /// Starting time constants are log-spaced over this range.
    pub start_range: (f64, f64),
    pub starts: usize,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
}

impl Default for FitObjective {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            initial: InitialState::Zero,
            time_constant_bounds: (1e-3, T_P_MAX),
            start_range: (30.0, 5000.0),
            starts: 5,
            max_iterations: 500,
            relative_tolerance: 1e-9,
            gradient_tolerance: 1e-8,
        }
    }
}

impl FitObjective {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Centre of the log-scaled time-constant parameterization.
    pub fn time_constant_centre(&self) -> f64 {
        (self.start_range.0 * self.start_range.1).sqrt()
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(EstimatorError::InvalidObjective(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and nonnegative");
        }
        let (lo, hi) = self.time_constant_bounds;
        if !(lo > 0.0 && lo < hi && hi <= T_P_MAX) {
            return bad("time-constant bounds must satisfy 0 < lo < hi <= T_P_MAX");
        }
        if !(self.start_range.0 > 0.0 && self.start_range.0 <= self.start_range.1) {
            return bad("start range must be positive and ordered");
        }
        if self.starts == 0 {
            return bad("at least one start is needed");
        }
        if matches!(self.initial, InitialState::Given(_)) {
            return bad("fitting supports zero or steady-state initial conditions");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub samples: usize,
    pub mse: f64,
    /// `None` for a constant target.
    pub r_squared: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Final objective of every start, in start order.
    pub start_objectives: Vec<f64>,
    /// Objective after every accepted step of the winning start.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fixed paths first, then fitted ones; carries the covariance.
    pub model: MisoModel,
    pub experiments: Vec<ExperimentMetrics>,
    /// `sum_i MSE_i + lambda |theta|^2` at the optimum.
    pub objective: f64,
    pub report: ConvergenceReport,
    /// Per-stage reports for a staged fit; a plain fit has one.
    pub stage_reports: Vec<ConvergenceReport>,
    pub hit_pole_bound: bool,
}

impl FitResult {
    pub fn mean_mse(&self) -> f64 {
        self.experiments.iter().map(|e| e.mse).sum::<f64>() / self.experiments.len() as f64
    }
}

/// Which initial condition a unit response starts from.
#[derive(Clone, Copy)]
enum Start {
    Zero,
    Steady,
}

impl Start {
    fn of(initial: &InitialState) -> Self {
        match initial {
            InitialState::SteadyState => Start::Steady,
            _ => Start::Zero,
        }
    }

    fn path_start(self) -> PathStart<'static> {
        match self {
            Start::Zero => PathStart::Zero,
            Start::Steady => PathStart::Steady,
        }
    }
}

/// The scaled least-squares problem for a set of free paths.
struct Problem<'a> {
    data: &'a [ExperimentData],
    inputs: Vec<Vec<&'a [f64]>>,
    targets: Vec<Vec<f64>>,
    weights: Vec<f64>,
    paths: &'a [PathTemplate],
    offsets: Vec<usize>,
    lambda: f64,
    start: Start,
    centre: f64,
    z_bounds: (f64, f64),
    h: f64,
    n_rows: usize,
}

/// Finite-difference step in `log10 T`.
const Z_STEP: f64 = 1e-5;

impl<'a> Problem<'a> {
    fn new(
        paths: &'a [PathTemplate],
        data: &'a [ExperimentData],
        objective: &FitObjective,
        fixed: Option<&MisoModel>,
    ) -> Result<Self> {
        let h = data[0].sample_period;
        for e in data {
            if e.sample_period != h {
                return Err(ModelError::InvalidSamplePeriod(e.sample_period).into());
            }
            if e.is_empty() {
                return Err(EstimatorError::Empty);
            }
        }
        let mut inputs = Vec::with_capacity(paths.len());
        for p in paths {
            if p.poles > crate::ltimodel::MAX_POLES {
                return Err(ModelError::InvalidParameter(format!("{} poles", p.poles)).into());
            }
            inputs.push(
                data.iter()
                    .map(|e| e.input(&p.input))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut targets: Vec<Vec<f64>> = data.iter().map(|e| e.output.clone()).collect();
        if let Some(f) = fixed {
            for (t, y_f) in targets.iter_mut().zip(predict(f, data, &objective.initial)?) {
                for (a, b) in t.iter_mut().zip(y_f) {
                    *a -= b;
                }
            }
        }
        let mut offsets = Vec::with_capacity(paths.len());
        let mut n = 0;
        for p in paths {
            offsets.push(n);
            n += 1 + p.poles;
        }
        let centre = objective.time_constant_centre();
        let (lo, hi) = objective.time_constant_bounds;
        Ok(Self {
            data,
            inputs,
            targets,
            weights: data.iter().map(|e| 1.0 / (e.len() as f64).sqrt()).collect(),
            paths,
            offsets,
            lambda: objective.lambda,
            start: Start::of(&objective.initial),
            centre,
            z_bounds: ((lo / centre).log10(), (hi / centre).log10()),
            h,
            n_rows: data.iter().map(ExperimentData::len).sum(),
        })
    }

    fn dim(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + 1 + self.paths.last().unwrap().poles)
    }

    fn is_gain(&self, j: usize) -> bool {
        self.offsets.contains(&j)
    }

    fn time_constants(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| self.centre * 10f64.powf(*v)).collect()
    }

    /// Unit-gain responses of path `p` on every experiment, concatenated.
    fn unit_response(&self, p: usize, z: &[f64]) -> Vec<f64> {
        let tcs = self.time_constants(z);
        let delay = (self.paths[p].dead_time / self.h).round() as usize;
        let disc = DiscretePath::new(&tcs, delay, self.h);
        let mut out = vec![0.0; self.n_rows];
        let mut at = 0;
        for u in &self.inputs[p] {
            disc.run(u, self.start.path_start(), &mut out[at..at + u.len()]);
            at += u.len();
        }
        out
    }

    fn z_of(&self, theta: &[f64], p: usize) -> Vec<f64> {
        let o = self.offsets[p];
        theta[o + 1..o + 1 + self.paths[p].poles].to_vec()
    }

    fn unit_responses(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.paths.len())
            .map(|p| self.unit_response(p, &self.z_of(theta, p)))
            .collect()
    }

    fn prediction(&self, theta: &[f64], units: &[Vec<f64>]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for (p, u) in units.iter().enumerate() {
            let k = theta[self.offsets[p]];
            for (a, b) in y.iter_mut().zip(u) {
                *a += k * b;
            }
        }
        y
    }

    fn row_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .zip(&self.weights)
            .flat_map(|(e, w)| std::iter::repeat_n(*w, e.len()))
    }

    fn targets_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.targets.iter().flatten().copied()
    }

    /// Weighted data residuals and the penalized objective.
    fn evaluate(&self, theta: &[f64], units: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let y_hat = self.prediction(theta, units);
        let r: Vec<f64> = self
            .targets_flat()
            .zip(&y_hat)
            .zip(self.row_weights())
            .map(|((y, yh), w)| w * (y - yh))
            .collect();
        let f = r.iter().map(|v| v * v).sum::<f64>()
            + self.lambda * theta.iter().map(|v| v * v).sum::<f64>();
        (r, f)
    }

    /// Jacobian of the unweighted prediction with respect to the scaled
    /// parameters; `z` columns by central differences of `step`.
    fn jacobian(&self, theta: &[f64], units: &[Vec<f64>], step: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.n_rows, self.dim());
        for (p, u) in units.iter().enumerate() {
            let o = self.offsets[p];
            jac.column_mut(o).copy_from_slice(u);
            let k = theta[o];
            let z = self.z_of(theta, p);
            for j in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += step;
                zm[j] -= step;
                let up = self.unit_response(p, &zp);
                let um = self.unit_response(p, &zm);
                let mut col = jac.column_mut(o + 1 + j);
                for (i, c) in col.iter_mut().enumerate() {
                    *c = k * (up[i] - um[i]) / (2.0 * step);
                }
            }
        }
        jac
    }

    /// Ridge solution of the gains for fixed time constants.
    fn ridge_gains(&self, theta: &mut [f64]) {
        let units = self.unit_responses(theta);
        let m = units.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        let w2: Vec<f64> = self.row_weights().map(|w| w * w).collect();
        let y: Vec<f64> = self.targets_flat().collect();
        for p in 0..m {
            for q in p..m {
                let s: f64 = (0..self.n_rows)
                    .map(|i| w2[i] * units[p][i] * units[q][i])
                    .sum();
                a[(p, q)] = s;
                a[(q, p)] = s;
            }
            b[p] = (0..self.n_rows).map(|i| w2[i] * units[p][i] * y[i]).sum();
            a[(p, p)] += self.lambda;
        }
        if let Some(k) = solve_spd(&a, &b) {
            for (p, v) in k.iter().enumerate() {
                if v.is_finite() {
                    theta[self.offsets[p]] = *v;
                }
            }
        }
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        if self.is_gain(j) {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            self.z_bounds
        }
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (j, v) in theta.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(j);
            *v = v.clamp(lo, hi);
        }
    }

    fn start_point(&self, s: usize, starts: usize, range: (f64, f64)) -> Vec<f64> {
        let frac = if starts > 1 {
            s as f64 / (starts - 1) as f64
        } else {
            0.5
        };
        let t0 = range.0 * (range.1 / range.0).powf(frac);
        let mut theta = vec![0.0; self.dim()];
        for (p, path) in self.paths.iter().enumerate() {
            for j in 0..path.poles {
                let t = t0 * 0.5f64.powi(j as i32);
                theta[self.offsets[p] + 1 + j] = (t / self.centre).log10();
            }
        }
        self.clamp(&mut theta);
        self.ridge_gains(&mut theta);
        theta
    }
}

struct LocalFit {
    theta: Vec<f64>,
    objective: f64,
    report: ConvergenceReport,
}

fn levenberg_marquardt(problem: &Problem<'_>, mut theta: Vec<f64>, obj: &FitObjective) -> LocalFit {
    let n = theta.len();
    let lambda = problem.lambda;
    let mut units = problem.unit_responses(&theta);
    let (mut r, mut f) = problem.evaluate(&theta, &units);
    let mut history = vec![f];
    let mut mu = 0.0;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut fresh = true;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);

    while iterations < obj.max_iterations {
        if fresh {
            // Residual r = w (y - J theta), so dr/dtheta = -w J.
            let mut jw = problem.jacobian(&theta, &units, Z_STEP);
            for (mut row, w) in jw.row_iter_mut().zip(problem.row_weights()) {
                row *= w;
            }
            a = jw.tr_mul(&jw);
            g = -jw.tr_mul(&DVector::from_column_slice(&r));
            for j in 0..n {
                a[(j, j)] += lambda;
                g[j] += lambda * theta[j];
            }
            if mu == 0.0 {
                let dmax = (0..n).map(|j| a[(j, j)]).fold(0.0, f64::max);
                mu = 1e-3 * dmax.max(1e-12);
            }
            fresh = false;
        }
        // Coordinates pinned at a bound by the gradient leave the system.
        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let (lo, hi) = problem.bounds(j);
                !((theta[j] >= hi && g[j] < 0.0) || (theta[j] <= lo && g[j] > 0.0))
            })
            .collect();
        grad_norm = 2.0 * free.iter().map(|&j| g[j] * g[j]).sum::<f64>().sqrt();
        if grad_norm < obj.gradient_tolerance || free.is_empty() {
            converged = true;
            break;
        }
        iterations += 1;
        let m = free.len();
        let mut af = DMatrix::<f64>::zeros(m, m);
        let mut gf = DVector::<f64>::zeros(m);
        for (a_i, &i) in free.iter().enumerate() {
            gf[a_i] = -g[i];
            for (b_i, &j) in free.iter().enumerate() {
                af[(a_i, b_i)] = a[(i, j)];
            }
            af[(a_i, a_i)] += mu;
        }
        let Some(step) = solve_spd(&af, &gf) else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let mut trial = theta.clone();
        for (a_i, &i) in free.iter().enumerate() {
            trial[i] += step[a_i];
        }
        problem.clamp(&mut trial);
        let d = DVector::from_iterator(n, trial.iter().zip(&theta).map(|(t, o)| t - o));
        // Predicted decrease of the half objective, doubled.
        let predicted = -2.0 * (g.dot(&d) + 0.5 * d.dot(&(&a * &d)));
        let trial_units = problem.unit_responses(&trial);
        let (trial_r, trial_f) = problem.evaluate(&trial, &trial_units);
        let rho = if predicted > 0.0 {
            (f - trial_f) / predicted
        } else {
            -1.0
        };
        if trial_f.is_finite() && trial_f < f && rho > 0.0 {
            let rel = (f - trial_f) / f.max(f64::MIN_POSITIVE);
            theta = trial;
            units = trial_units;
            r = trial_r;
            f = trial_f;
            history.push(f);
            mu *= f64::max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            fresh = true;
            if rel < obj.relative_tolerance {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            // No representable step decreases the objective any further.
            if !mu.is_finite() || mu > 1e20 * (1.0 + a.diagonal().amax()) {
                converged = true;
                break;
            }
        }
    }
    LocalFit {
        theta,
        objective: f,
        report: ConvergenceReport {
            iterations,
            gradient_norm: grad_norm,
            converged,
            start_objectives: Vec::new(),
            history,
        },
    }
}

fn assemble_model(
    output: &str,
    problem: &Problem<'_>,
    theta: &[f64],
    fixed: Option<&MisoModel>,
) -> MisoModel {
    let mut model = fixed.cloned().unwrap_or_else(|| MisoModel::new(output));
    model.covariance = None;
    for (p, path) in problem.paths.iter().enumerate() {
        let o = problem.offsets[p];
        model.paths.push(ModelPath {
            input: path.input.clone(),
            stage: path.stage,
            process: ProcessModel {
                gain: theta[o],
                dead_time: path.dead_time,
                time_constants: problem.time_constants(&problem.z_of(theta, p)),
            },
        });
    }
    model
}

/// `s^2 (J^T J + lambda I)^{-1}` in the scaled parameters, mapped to gains
/// and time constants.
fn covariance(problem: &Problem<'_>, theta: &[f64]) -> Option<DMatrix<f64>> {
    let units = problem.unit_responses(theta);
    let jac = problem.jacobian(theta, &units, Z_STEP);
    let y_hat = problem.prediction(theta, &units);
    let ssr: f64 = problem
        .targets_flat()
        .zip(&y_hat)
        .map(|(y, yh)| (y - yh) * (y - yh))
        .sum();
    let n = theta.len();
    let dof = problem.n_rows.saturating_sub(n).max(1);
    let s2 = ssr / dof as f64;
    let mut info = jac.tr_mul(&jac);
    for j in 0..n {
        info[(j, j)] += problem.lambda;
    }
    let cov_z = inverse_spd(&info)? * s2;
    let scale: Vec<f64> = (0..n)
        .map(|j| {
            if problem.is_gain(j) {
                1.0
            } else {
                problem.centre * 10f64.powf(theta[j]) * std::f64::consts::LN_10
            }
        })
        .collect();
    let cov = DMatrix::from_fn(n, n, |i, j| scale[i] * cov_z[(i, j)] * scale[j]);
    cov.iter().all(|v| v.is_finite()).then_some(cov)
}

fn block_diagonal(blocks: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = vec![vec![0.0; n]; n];
    let mut at = 0;
    for b in blocks {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                out[at + i][at + j] = b[(i, j)];
            }
        }
        at += b.nrows();
    }
    out
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn metrics(model: &MisoModel, data: &[ExperimentData], initial: &InitialState) -> Result<Vec<ExperimentMetrics>> {
    predict(model, data, initial)?
        .iter()
        .zip(data)
        .map(|(y_hat, e)| {
            Ok(ExperimentMetrics {
                samples: e.len(),
                mse: mse(&e.output, y_hat)?,
                r_squared: r_squared(&e.output, y_hat).ok(),
            })
        })
        .collect()
}

/// Fits the free paths of `template` with the paths of `fixed` frozen.
///
/// Running out of iterations is not an error: the best point found is
/// returned with `report.converged == false`.
pub fn fit(
    template: &ModelTemplate,
    data: &[ExperimentData],
    objective: &FitObjective,
    fixed: Option<&MisoModel>,
) -> Result<FitResult> {
    objective.check()?;
    if data.is_empty() {
        return Err(EstimatorError::NoData);
    }
    if template.paths.is_empty() {
        return Err(EstimatorError::NoFreeParameters);
    }
    let problem = Problem::new(&template.paths, data, objective, fixed)?;
    let nonlinear = template.paths.iter().any(|p| p.poles > 0);
    let starts = if nonlinear { objective.starts } else { 1 };

    let mut best: Option<LocalFit> = None;
    let mut start_objectives = Vec::with_capacity(starts);
    for s in 0..starts {
        let theta0 = problem.start_point(s, starts, objective.start_range);
        let local = levenberg_marquardt(&problem, theta0, objective);
        start_objectives.push(local.objective);
        log::debug!(
            "start {s}: objective {:.6e} after {} iterations",
            local.objective,
            local.report.iterations
        );
        if best.as_ref().is_none_or(|b| local.objective < b.objective) {
            best = Some(local);
        }
    }
    let mut best = best.expect("at least one start");
    best.report.start_objectives = start_objectives;

    let mut model = assemble_model(&template.output, &problem, &best.theta, fixed);
    let free_cov = covariance(&problem, &best.theta);
    if free_cov.is_none() {
        log::warn!("parameter covariance is singular, omitted");
    }
    if let Some(cf) = free_cov {
        let n_fixed = fixed.map_or(0, MisoModel::parameter_count);
        let fixed_block = fixed
            .and_then(|f| f.covariance.as_deref())
            .map(to_matrix)
            .unwrap_or_else(|| DMatrix::zeros(n_fixed, n_fixed));
        model.covariance = Some(block_diagonal(&[fixed_block, cf]));
    }
    let fixed_inputs = fixed.map_or(0, |f| f.paths.len());
    let hit_pole_bound = model.paths[fixed_inputs..]
        .iter()
        .flat_map(|p| &p.process.time_constants)
        .any(|t| *t >= objective.time_constant_bounds.1 * (1.0 - 1e-6));
    Ok(FitResult {
        experiments: metrics(&model, data, &objective.initial)?,
        objective: best.objective,
        stage_reports: vec![best.report.clone()],
        report: best.report,
        model,
        hit_pole_bound,
    })
}

/// Sequential identification: stage `s` is fitted to what the frozen stages
/// before it leave unexplained. Empty later stages are skipped.
pub fn staged_fit(
    output: &str,
    stages: &[StageSpec],
    data: &[ExperimentData],
    objective: &FitObjective,
) -> Result<FitResult> {
    if stages.len() > 3 {
        return Err(EstimatorError::TooManyStages(stages.len()));
    }
    if stages.first().is_none_or(|s| s.paths.is_empty()) {
        return Err(EstimatorError::EmptyStageOne);
    }
    let mut current: Option<FitResult> = None;
    let mut penalty = 0.0;
    let mut reports = Vec::new();
    for (s, stage) in stages.iter().enumerate() {
        if stage.paths.is_empty() {
            continue;
        }
        let paths = stage
            .paths
            .iter()
            .map(|p| PathTemplate {
                stage: (s + 1) as u8,
                ..p.clone()
            })
            .collect();
        let template = ModelTemplate::new(output, paths);
        let obj = FitObjective {
            lambda: stage.lambda,
            ..objective.clone()
        };
        let result = fit(&template, data, &obj, current.as_ref().map(|r| &r.model))?;
        let stage_mse: f64 = result.experiments.iter().map(|e| e.mse).sum();
        penalty += result.objective - stage_mse;
        reports.push(result.report.clone());
        let hit = result.hit_pole_bound || current.as_ref().is_some_and(|c| c.hit_pole_bound);
        current = Some(FitResult {
            hit_pole_bound: hit,
            ..result
        });
    }
    let mut result = current.expect("stage 1 is non-empty");
    let total_mse: f64 = result.experiments.iter().map(|e| e.mse).sum();
    result.objective = total_mse + penalty;
    result.report = ConvergenceReport {
        iterations: reports.iter().map(|r| r.iterations).sum(),
        gradient_norm: reports.iter().map(|r| r.gradient_norm).fold(0.0, f64::max),
        converged: reports.iter().all(|r| r.converged),
        start_objectives: reports.last().map(|r| r.start_objectives.clone()).unwrap_or_default(),
        history: Vec::new(),
    };
    if reports.len() == 1 {
        result.report = reports[0].clone();
    }
    result.stage_reports = reports;
    Ok(result)
}

/// Jacobian of the concatenated model output over `data` with respect to
/// `[K, log10 T_1, ...]` per path, `log10 T` columns by central differences
/// of the given step. Used for the parameter covariance.
pub fn scaled_jacobian(
    model: &MisoModel,
    data: &[ExperimentData],
    initial: &InitialState,
    step: f64,
) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(EstimatorError::NoData);
    }
    let paths: Vec<PathTemplate> = model
        .paths
        .iter()
        .map(|p| PathTemplate {
            input: p.input.clone(),
            poles: p.process.pole_count(),
            dead_time: p.process.dead_time,
            stage: p.stage,
        })
        .collect();
    let objective = FitObjective {
        initial: initial.clone(),
        ..FitObjective::default()
    };
    let problem = Problem::new(&paths, data, &objective, None)?;
    let mut theta = Vec::with_capacity(problem.dim());
    for p in &model.paths {
        theta.push(p.process.gain);
        theta.extend(
            p.process
                .time_constants
                .iter()
                .map(|t| (t / problem.centre).log10()),
        );
    }
    let units = problem.unit_responses(&theta);
    Ok(problem.jacobian(&theta, &units, step))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prbs(n: usize, hold: usize, seed: u64) -> Vec<f64> {
        // deterministic pseudo-random binary sequence from an LCG
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut v = Vec::with_capacity(n);
        let mut level = 0.0;
        for k in 0..n {
            if k % hold == 0 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                level = if (s >> 33) & 1 == 1 { 1.0 } else { -1.0 };
            }
            v.push(level);
        }
        v
    }

    fn experiment(model: &MisoModel, n: usize, seed: u64) -> ExperimentData {
        let mut inputs = BTreeMap::new();
        for (i, name) in model.inputs().enumerate() {
            inputs.insert(name.to_string(), prbs(n, 40 + 13 * i, seed + i as u64));
        }
        let output = model
            .simulate_source(&inputs, n, 5.0, &InitialState::Zero)
            .unwrap();
        ExperimentData {
            inputs,
            output,
            sample_period: 5.0,
        }
    }

    #[test]
    fn mse_and_r_squared_by_hand() {
        assert_eq!(mse(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(EstimatorError::LengthMismatch { .. })
        ));
        let y = [1.0, 2.0, 4.0];
        let mean = 7.0 / 3.0;
        assert!(r_squared(&y, &[mean; 3]).unwrap().abs() < 1e-15);
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(
            r_squared(&[3.0, 3.0], &[3.0, 3.0]),
            Err(EstimatorError::ConstantTarget)
        );
    }

    #[test]
    fn single_pole_round_trip() {
        let truth = MisoModel::new("y").with_path("u", ProcessModel::new(1.0, vec![100.0]));
        let data = vec![experiment(&truth, 2000, 1)];
        let t = ModelTemplate::new("y", vec![PathTemplate::new("u", 1)]);
        let r = fit(&t, &data, &FitObjective::default(), None).unwrap();
        let p = &r.model.paths[0].process;
        assert!((p.gain - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.time_constants[0] - 100.0).abs() < 0.1, "{p:?}");
        assert!(r.report.converged);
        assert!(!r.hit_pole_bound);
        assert!(r.experiments[0].r_squared.unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn objective_decreases_monotonically() {
        let truth = MisoModel::new("y")
            .with_path("a", ProcessModel::new(0.7, vec![300.0, 120.0]))
            .with_path("b", ProcessModel::new(-0.4, vec![60.0]));
        let mut data = vec![experiment(&truth, 1500, 3)];
        // measurement noise so the optimum is not exactly zero
        for (k, v) in data[0].output.iter_mut().enumerate() {
            *v += 0.01 * ((k * 7919) % 101) as f64 / 101.0;
        }
        let t = ModelTemplate::new("y", vec![PathTemplate::new("a", 2), PathTemplate::new("b", 1)]);
        let r = fit(&t, &data, &FitObjective::default().with_lambda(1e-4), None).unwrap();
        let h = &r.report.history;
        assert!(h.len() > 1);
        assert!(h.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(r.report.start_objectives.len(), 5);
    }

    #[test]
    fn ridge_shrinks_gains() {
        let truth = MisoModel::new("y").with_path("u", ProcessModel::new(1.0, vec![100.0]));
        let data = vec![experiment(&truth, 1000, 2)];
        let t = ModelTemplate::new("y", vec![PathTemplate::new("u", 1)]);
        let k0 = fit(&t, &data, &FitObjective::default(), None).unwrap().model.paths[0]
            .process
            .gain;
        let k1 = fit(&t, &data, &FitObjective::default().with_lambda(10.0), None)
            .unwrap()
            .model
            .paths[0]
            .process
            .gain;
        assert!(k1.abs() < k0.abs());
    }

    #[test]
    fn very_slow_pole_hits_the_bound() {
        let truth = MisoModel::new("y").with_path("u", ProcessModel::new(50.0, vec![T_P_MAX]));
        let mut data = vec![experiment(&truth, 400, 4)];
        // an integrator-like response: rescale a pole far beyond the bound
        let slow = ProcessModel::new(5000.0, vec![1e6]);
        data[0].output = slow.simulate(&data[0].inputs["u"], 5.0, &InitialState::Zero);
        let t = ModelTemplate::new("y", vec![PathTemplate::new("u", 1)]);
        let r = fit(&t, &data, &FitObjective::default(), None).unwrap();
        assert!(r.hit_pole_bound, "{:?}", r.model.paths[0].process);
    }

    #[test]
    fn single_stage_equals_plain_fit() {
        let truth = MisoModel::new("y")
            .with_path("a", ProcessModel::new(0.5, vec![200.0]))
            .with_path("b", ProcessModel::new(0.3, vec![50.0]));
        let data = vec![experiment(&truth, 1200, 5)];
        let paths = vec![PathTemplate::new("a", 1), PathTemplate::new("b", 1)];
        let plain = fit(&ModelTemplate::new("y", paths.clone()), &data, &FitObjective::default(), None)
            .unwrap();
        let staged = staged_fit(
            "y",
            &[StageSpec { paths, lambda: 0.0 }],
            &data,
            &FitObjective::default(),
        )
        .unwrap();
        assert_eq!(plain.model, staged.model);
        assert_eq!(plain.experiments, staged.experiments);
    }

    #[test]
    fn stage_errors() {
        let data = vec![experiment(&MisoModel::new("y").with_path("u", ProcessModel::new(1.0, vec![9.0])), 50, 1)];
        assert_eq!(
            staged_fit("y", &[StageSpec { paths: vec![], lambda: 0.0 }], &data, &FitObjective::default()),
            Err(EstimatorError::EmptyStageOne)
        );
        assert_eq!(
            fit(&ModelTemplate::new("y", vec![]), &data, &FitObjective::default(), None),
            Err(EstimatorError::NoFreeParameters)
        );
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let truth = MisoModel::new("y").with_path("u", ProcessModel::new(1.0, vec![100.0]));
        let mut data = vec![experiment(&truth, 1000, 9)];
        for (k, v) in data[0].output.iter_mut().enumerate() {
            *v += 0.05 * (((k * 2654435761) % 1000) as f64 / 1000.0 - 0.5);
        }
        let t = ModelTemplate::new("y", vec![PathTemplate::new("u", 1)]);
        let r = fit(&t, &data, &FitObjective::default(), None).unwrap();
        let c = to_matrix(r.model.covariance.as_ref().unwrap());
        assert_eq!(c, c.transpose());
        assert!(c.symmetric_eigenvalues().iter().all(|e| *e >= -1e-15));
        assert!(c[(0, 0)] > 0.0 && c[(1, 1)] > 0.0);
    }
}
