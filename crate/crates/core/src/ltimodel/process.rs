use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{InitialState, ModelError, T_P_MAX};

/// Maximum number of real poles in one path.
pub const MAX_POLES: usize = 3;

/// Transfer function `K e^{-s Td} / prod_i (1 + s T_i)` for one input-output path.
///
/// Zero time constants describe a static gain; this is how the published
/// models write paths such as the secondary-air `O2` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub gain: f64,
    #[serde(default)]
    pub dead_time: f64,
    pub time_constants: Vec<f64>,
}

impl ProcessModel {
    pub fn new(gain: f64, time_constants: Vec<f64>) -> Self {
        Self {
            gain,
            dead_time: 0.0,
            time_constants,
        }
    }

    pub fn static_gain(gain: f64) -> Self {
        Self::new(gain, Vec::new())
    }

    pub fn with_dead_time(mut self, dead_time: f64) -> Self {
        self.dead_time = dead_time;
        self
    }

    pub fn pole_count(&self) -> usize {
        self.time_constants.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.gain.is_finite() {
            return Err(ModelError::InvalidParameter(format!("gain {}", self.gain)));
        }
        if !(self.dead_time.is_finite() && self.dead_time >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "dead time {}",
                self.dead_time
            )));
        }
        if self.time_constants.len() > MAX_POLES {
            return Err(ModelError::InvalidParameter(format!(
                "{} poles, at most {MAX_POLES} allowed",
                self.time_constants.len()
            )));
        }
        for &t in &self.time_constants {
            if !(t > 0.0 && t <= T_P_MAX) {
                return Err(ModelError::InvalidParameter(format!(
                    "time constant {t} outside (0, {T_P_MAX}]"
                )));
            }
        }
        Ok(())
    }

    /// Dead time rounded to whole samples.
    pub fn delay_samples(&self, sample_period: f64) -> usize {
        (self.dead_time / sample_period).round() as usize
    }

    /// Unit-gain zero-order-hold discretization of the pole cascade.
    pub(crate) fn discretize(&self, sample_period: f64) -> DiscretePath {
        DiscretePath::new(
            &self.time_constants,
            self.delay_samples(sample_period),
            sample_period,
        )
    }

    /// Simulates this path with its gain applied.
    pub fn simulate(
        &self,
        input: &[f64],
        sample_period: f64,
        initial: &InitialState,
    ) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        self.discretize(sample_period)
            .run(input, initial.path_start(0), &mut out);
        for v in &mut out {
            *v *= self.gain;
        }
        out
    }
}

/// How a single discretized path starts.
#[derive(Clone, Copy, Debug)]
pub(crate) enum PathStart<'a> {
    Zero,
    /// Every stage sits at the steady state of the first input sample.
    Steady,
    Given(&'a [f64]),
}

/// Exact ZOH discretization of a continuous cascade of first-order lags
/// `x1' = (u - x1)/T1`, `x_i' = (x_{i-1} - x_i)/T_i`, output `x_m`.
///
/// The state matrix is lower triangular, so `phi` is too.
#[derive(Clone, Debug)]
pub(crate) struct DiscretePath {
    order: usize,
    phi: [[f64; MAX_POLES]; MAX_POLES],
    gamma: [f64; MAX_POLES],
    delay: usize,
}

impl DiscretePath {
    pub(crate) fn new(time_constants: &[f64], delay: usize, h: f64) -> Self {
        let order = time_constants.len();
        let mut phi = [[0.0; MAX_POLES]; MAX_POLES];
        let mut gamma = [0.0; MAX_POLES];
        if order > 0 {
            // exp([[A h, B h], [0, 0]]) = [[Phi, Gamma], [0, 1]]
            let n = order + 1;
            let mut m = DMatrix::<f64>::zeros(n, n);
            for (i, &t) in time_constants.iter().enumerate() {
                m[(i, i)] = -h / t;
                if i == 0 {
                    m[(0, order)] = h / t;
                } else {
                    m[(i, i - 1)] = h / t;
                }
            }
            let e = m.exp();
            for i in 0..order {
                for j in 0..=i {
                    phi[i][j] = e[(i, j)];
                }
                gamma[i] = e[(i, order)];
            }
        }
        Self {
            order,
            phi,
            gamma,
            delay,
        }
    }

    /// Unit-gain response of the path to `u`, written into `out`.
    pub(crate) fn run(&self, u: &[f64], start: PathStart<'_>, out: &mut [f64]) {
        let n = u.len();
        debug_assert_eq!(out.len(), n);
        if n == 0 {
            return;
        }
        let pre = match start {
            PathStart::Steady => u[0],
            PathStart::Zero => 0.0,
            // A given state describes the filter; the delay line holds the
            // first sample.
            PathStart::Given(_) => u[0],
        };
        let d = self.delay;
        let input = |k: usize| if k >= d { u[k - d] } else { pre };

        let mut x = [0.0; MAX_POLES];
        match start {
            PathStart::Zero => {}
            PathStart::Steady => x[..self.order].fill(pre),
            PathStart::Given(s) => {
                for (xi, si) in x.iter_mut().zip(s) {
                    *xi = *si;
                }
            }
        }

        let p = &self.phi;
        let g = &self.gamma;
        match self.order {
            0 => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = input(k);
                }
            }
            1 => {
                let (a, b) = (p[0][0], g[0]);
                let mut x0 = x[0];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = x0;
                    x0 = a * x0 + b * input(k);
                }
            }
            2 => {
                let [mut x0, mut x1, _] = x;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = x1;
                    let uk = input(k);
                    let n0 = p[0][0] * x0 + g[0] * uk;
                    let n1 = p[1][0] * x0 + p[1][1] * x1 + g[1] * uk;
                    x0 = n0;
                    x1 = n1;
                }
            }
            _ => {
                let [mut x0, mut x1, mut x2] = x;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = x2;
                    let uk = input(k);
                    let n0 = p[0][0] * x0 + g[0] * uk;
                    let n1 = p[1][0] * x0 + p[1][1] * x1 + g[1] * uk;
                    let n2 = p[2][0] * x0 + p[2][1] * x1 + p[2][2] * x2 + g[2] * uk;
                    x0 = n0;
                    x1 = n1;
                    x2 = n2;
                }
            }
        }
    }
}
