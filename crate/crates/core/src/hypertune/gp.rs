//! Gaussian-process regression with an ARD Matern 5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Lower bound on the observation-noise variance (standardized units).
pub const MIN_NOISE: f64 = 1e-10;

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_LENGTH: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091); // ln 1e-2, ln 1e2
const LOG_SIGNAL: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091);
const LOG_NOISE_MAX: f64 = 0.0;
const MEAN_BOUND: f64 = 3.0;
/// Prior on log lengthscales: normal around `ln 1` with this deviation.
const LENGTH_PRIOR_SD: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
    pub mean: f64,
}

impl GpHyper {
    pub fn default_for(dim: usize) -> Self {
        Self {
            log_lengthscales: vec![0.5f64.ln(); dim],
            log_signal_variance: 0.0,
            log_noise_variance: 1e-4f64.ln(),
            mean: 0.0,
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.extend([self.log_signal_variance, self.log_noise_variance, self.mean]);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 3;
        Self {
            log_lengthscales: v[..d].to_vec(),
            log_signal_variance: v[d],
            log_noise_variance: v[d + 1],
            mean: v[d + 2],
        }
    }

    fn project(v: &mut [f64]) {
        let d = v.len() - 3;
        for x in &mut v[..d] {
            *x = x.clamp(LOG_LENGTH.0, LOG_LENGTH.1);
        }
        v[d] = v[d].clamp(LOG_SIGNAL.0, LOG_SIGNAL.1);
        v[d + 1] = v[d + 1].clamp(MIN_NOISE.ln(), LOG_NOISE_MAX);
        v[d + 2] = v[d + 2].clamp(-MEAN_BOUND, MEAN_BOUND);
    }
}

fn matern52(sigma2: f64, r: f64) -> f64 {
    sigma2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_distance(a: &[f64], b: &[f64], inv_l: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_l)
        .map(|((x, y), il)| {
            let d = (x - y) * il;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Settings of the marginal-likelihood fit.
#[derive(Clone, Debug, PartialEq)]
pub struct GpFitOptions {
    pub starts: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self {
            starts: 3,
            steps: 80,
            learning_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    hyper: GpHyper,
    inv_l: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    shift: f64,
    scale: f64,
}

/// Cholesky with growing diagonal jitter.
fn robust_cholesky(mut k: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let mut jitter = 0.0;
    for _ in 0..8 {
        if let Some(c) = k.clone().cholesky() {
            return Some(c);
        }
        let add = if jitter == 0.0 { 1e-10 } else { jitter * 9.0 };
        for i in 0..n {
            k[(i, i)] += add;
        }
        jitter += add;
    }
    None
}

impl GaussianProcess {
    fn kernel_matrix(x: &[Vec<f64>], h: &GpHyper) -> DMatrix<f64> {
        let n = x.len();
        let inv_l: Vec<f64> = h.log_lengthscales.iter().map(|l| (-l).exp()).collect();
        let s2 = h.log_signal_variance.exp();
        let noise = h.log_noise_variance.exp().max(MIN_NOISE);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = matern52(s2, scaled_distance(&x[i], &x[j], &inv_l));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] = s2 + noise;
        }
        k
    }

    /// Conditions a GP with fixed hyperparameters. With `standardize` the
    /// targets are shifted and scaled to zero mean and unit variance first.
    pub fn with_hyper(x: Vec<Vec<f64>>, y: &[f64], hyper: GpHyper, standardize: bool) -> Option<Self> {
        assert_eq!(x.len(), y.len());
        let (shift, scale) = if standardize { standardization(y) } else { (0.0, 1.0) };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - shift) / scale - hyper.mean));
        let chol = robust_cholesky(Self::kernel_matrix(&x, &hyper))?;
        let alpha = chol.solve(&ys);
        let inv_l = hyper.log_lengthscales.iter().map(|l| (-l).exp()).collect();
        Some(Self {
            x,
            hyper,
            inv_l,
            chol,
            alpha,
            shift,
            scale,
        })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood plus a
    /// weak lengthscale prior, from `warm` (if any), a default point and
    /// random points; the best start wins.
    pub fn fit<R: Rng + ?Sized>(
        x: Vec<Vec<f64>>,
        y: &[f64],
        warm: Option<&GpHyper>,
        options: &GpFitOptions,
        rng: &mut R,
    ) -> Option<Self> {
        let dim = x.first().map_or(0, Vec::len);
        let (shift, scale) = standardization(y);
        let ys: Vec<f64> = y.iter().map(|v| (v - shift) / scale).collect();
        let sq = squared_differences(&x);
        let mut starts = Vec::new();
        if let Some(w) = warm.filter(|w| w.log_lengthscales.len() == dim) {
            starts.push(w.to_vec());
        }
        starts.push(GpHyper::default_for(dim).to_vec());
        while starts.len() < options.starts.max(1) {
            let mut h = GpHyper::default_for(dim);
            for l in &mut h.log_lengthscales {
                *l = rng.random_range(0.05f64.ln()..2f64.ln());
            }
            h.log_signal_variance = rng.random_range(-1.0..1.0);
            starts.push(h.to_vec());
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in starts {
            let (v, theta) = adam(&sq, &ys, s, options);
            if v.is_finite() && best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, theta));
            }
        }
        let hyper = GpHyper::from_vec(&best?.1);
        let mut gp = Self::with_hyper(x, &ys, hyper, false)?;
        gp.shift = shift;
        gp.scale = scale;
        Some(gp)
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior mean and variance of the latent function at `x`, in the
    /// units of the targets.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let s2 = self.hyper.log_signal_variance.exp();
        let k = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| matern52(s2, scaled_distance(xi, x, &self.inv_l))),
        );
        let mu = self.hyper.mean + k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).expect("triangular solve");
        let var = (s2 - v.norm_squared()).max(0.0);
        (
            mu * self.scale + self.shift,
            var * self.scale * self.scale,
        )
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let ys = self.chol.l() * self.chol.l().transpose() * &self.alpha;
        let n = ys.len() as f64;
        -0.5 * ys.dot(&self.alpha)
            - self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len().max(1) as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// `sq[d][(i, j)] = (x_i,d - x_j,d)^2`.
fn squared_differences(x: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| DMatrix::from_fn(n, n, |i, j| (x[i][d] - x[j][d]).powi(2)))
        .collect()
}

/// Penalized log marginal likelihood and its gradient in the packed
/// hyperparameters `[ln l_1.., ln s^2, ln noise, mean]`.
fn objective(sq: &[DMatrix<f64>], y: &[f64], theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = y.len();
    let dim = sq.len();
    let inv_l2: Vec<f64> = theta[..dim].iter().map(|l| (-2.0 * l).exp()).collect();
    let s2 = theta[dim].exp();
    let noise = theta[dim + 1].exp().max(MIN_NOISE);
    let mean = theta[dim + 2];

    let mut r = DMatrix::zeros(n, n);
    for (d, m) in sq.iter().enumerate() {
        r += m * inv_l2[d];
    }
    r.apply(|v| *v = v.sqrt());
    let e = r.map(|v| (-SQRT5 * v).exp());
    let mut k = DMatrix::from_fn(n, n, |i, j| {
        let ri = r[(i, j)];
        s2 * (1.0 + SQRT5 * ri + 5.0 / 3.0 * ri * ri) * e[(i, j)]
    });
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = k.clone().cholesky()?;
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let alpha = chol.solve(&resid);
    let k_inv = chol.inverse();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut value = -0.5 * resid.dot(&alpha) - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = alpha alpha^T - K^{-1}; dL/dphi = 0.5 tr(W dK/dphi)
    let w = &alpha * alpha.transpose() - &k_inv;
    let mut grad = vec![0.0; theta.len()];
    // common factor of the lengthscale derivatives
    let g = DMatrix::from_fn(n, n, |i, j| {
        s2 * 5.0 / 3.0 * e[(i, j)] * (1.0 + SQRT5 * r[(i, j)]) * w[(i, j)]
    });
    for d in 0..dim {
        grad[d] = 0.5 * g.component_mul(&sq[d]).sum() * inv_l2[d];
    }
    grad[dim] = 0.5 * w.component_mul(&(&k - DMatrix::identity(n, n) * noise)).sum();
    grad[dim + 1] = 0.5 * w.trace() * noise;
    grad[dim + 2] = alpha.sum();

    for d in 0..dim {
        let z = theta[d] / LENGTH_PRIOR_SD;
        value -= 0.5 * z * z;
        grad[d] -= theta[d] / (LENGTH_PRIOR_SD * LENGTH_PRIOR_SD);
    }
    value.is_finite().then_some((value, grad))
}

/// Projected Adam ascent; returns the best value seen and its point.
fn adam(sq: &[DMatrix<f64>], y: &[f64], mut theta: Vec<f64>, opt: &GpFitOptions) -> (f64, Vec<f64>) {
    GpHyper::project(&mut theta);
    let p = theta.len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut best = (f64::NEG_INFINITY, theta.clone());
    for t in 1..=opt.steps {
        let Some((val, grad)) = objective(sq, y, &theta) else {
            break;
        };
        if val > best.0 {
            best = (val, theta.clone());
        }
        for i in 0..p {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            theta[i] += opt.learning_rate * mh / (vh.sqrt() + eps);
        }
        GpHyper::project(&mut theta);
    }
    if let Some((val, _)) = objective(sq, y, &theta) {
        if val > best.0 {
            best = (val, theta);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 / 11.0, ((i * 7) % 12) as f64 / 11.0])
            .collect();
        let y = x.iter().map(|p| (3.0 * p[0]).sin() + 0.3 * p[1]).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = data();
        let sq = squared_differences(&x);
        let theta = vec![-0.7, 0.2, 0.3, -3.0, 0.1];
        let (_, g) = objective(&sq, &y, &theta).unwrap();
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (objective(&sq, &y, &a).unwrap().0 - objective(&sq, &y, &b).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let (x, y) = data();
        let mut h = GpHyper::default_for(2);
        h.log_noise_variance = MIN_NOISE.ln();
        let gp = GaussianProcess::with_hyper(x.clone(), &y, h, true).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, var) = gp.predict(xi);
            assert!((mu - yi).abs() < 1e-6, "{mu} {yi}");
            assert!(var < 1e-6);
        }
        let (_, far) = gp.predict(&[5.0, 5.0]);
        assert!(far > gp.predict(&x[3]).1);
    }

    #[test]
    fn fitting_improves_the_penalized_likelihood() {
        let (x, y) = data();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (shift, scale) = standardization(&y);
        let ys: Vec<f64> = y.iter().map(|v| (v - shift) / scale).collect();
        let sq = squared_differences(&x);
        let start = objective(&sq, &ys, &GpHyper::default_for(2).to_vec()).unwrap().0;
        let gp = GaussianProcess::fit(x, &y, None, &GpFitOptions::default(), &mut rng).unwrap();
        let fitted = objective(&sq, &ys, &gp.hyper().to_vec()).unwrap().0;
        assert!(fitted >= start);
    }
}
