use statrs::distribution::{ContinuousCDF, Normal};

use super::{InitialState, MisoModel, ModelError, SignalSource};

/// Pointwise prediction band around the simulated output.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceBand {
    pub prediction: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConfidenceBand {
    pub fn half_width(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.prediction)
            .map(|(u, p)| u - p)
            .collect()
    }
}

/// Central finite-difference sensitivity of the output to each entry of the
/// parameter vector, one row per parameter.
pub(crate) fn output_sensitivities<S: SignalSource + ?Sized>(
    model: &MisoModel,
    source: &S,
    len: usize,
    sample_period: f64,
    initial: &InitialState,
    rel_step: f64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let theta = model.parameter_vector();
    let mut rows = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let step = rel_step * theta[i].abs().max(1e-3);
        let mut plus = theta.clone();
        plus[i] += step;
        let mut minus = theta.clone();
        minus[i] -= step;
        let yp = model
            .with_parameters(&plus)
            .simulate_source(source, len, sample_period, initial)?;
        let ym = model
            .with_parameters(&minus)
            .simulate_source(source, len, sample_period, initial)?;
        rows.push(
            yp.iter()
                .zip(&ym)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect(),
        );
    }
    Ok(rows)
}

/// First-order (delta-method) band `y_hat +- z(level) sqrt(g' Sigma g)` where
/// `g` is the output sensitivity to the model parameters.
pub fn output_confidence_band<S: SignalSource + ?Sized>(
    model: &MisoModel,
    source: &S,
    len: usize,
    sample_period: f64,
    initial: &InitialState,
    level: f64,
) -> Result<ConfidenceBand, ModelError> {
    let cov = model.covariance.as_ref().ok_or(ModelError::NoCovariance)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(ModelError::InvalidParameter(format!("level {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let prediction = model.simulate_source(source, len, sample_period, initial)?;
    let sens = output_sensitivities(model, source, len, sample_period, initial, 1e-6)?;
    let p = sens.len();
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    for t in 0..len {
        let mut var = 0.0;
        for i in 0..p {
            let gi = sens[i][t];
            if gi == 0.0 {
                continue;
            }
            for j in 0..p {
                var += gi * cov[i][j] * sens[j][t];
            }
        }
        let hw = z * var.max(0.0).sqrt();
        lower.push(prediction[t] - hw);
        upper.push(prediction[t] + hw);
    }
    Ok(ConfidenceBand {
        prediction,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ltimodel::ProcessModel;

    fn single(cov: Vec<Vec<f64>>) -> MisoModel {
        let mut m = MisoModel::new("y").with_path("u", ProcessModel::new(1.5, vec![120.0]));
        m.covariance = Some(cov);
        m
    }

    fn unit_step(n: usize) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("u".to_string(), vec![1.0; n])])
    }

    #[test]
    fn zero_covariance_gives_zero_width() {
        let m = single(vec![vec![0.0; 2]; 2]);
        let b = output_confidence_band(&m, &unit_step(50), 50, 5.0, &InitialState::Zero, 0.95)
            .unwrap();
        assert_eq!(b.lower, b.prediction);
        assert_eq!(b.upper, b.prediction);
    }

    #[test]
    fn gain_variance_gives_z_sigma_at_steady_state() {
        let sigma_k = 0.02;
        let m = single(vec![vec![sigma_k * sigma_k, 0.0], vec![0.0, 0.0]]);
        let n = 400;
        let b = output_confidence_band(&m, &unit_step(n), n, 5.0, &InitialState::Zero, 0.95)
            .unwrap();
        let hw = b.half_width()[n - 1];
        assert!((hw - 1.959964 * sigma_k).abs() < 1e-6, "{hw}");
    }

    #[test]
    fn doubling_covariance_scales_by_sqrt2() {
        let c = vec![vec![4e-4, 1e-3], vec![1e-3, 25.0]];
        let c2: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let s = unit_step(200);
        let b1 = output_confidence_band(&single(c), &s, 200, 5.0, &InitialState::Zero, 0.9)
            .unwrap();
        let b2 = output_confidence_band(&single(c2), &s, 200, 5.0, &InitialState::Zero, 0.9)
            .unwrap();
        for (a, b) in b1.half_width().iter().zip(b2.half_width()) {
            assert!((b - a * 2f64.sqrt()).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn missing_covariance_is_an_error() {
        let m = MisoModel::new("y").with_path("u", ProcessModel::new(1.0, vec![10.0]));
        assert_eq!(
            output_confidence_band(&m, &unit_step(5), 5, 5.0, &InitialState::Zero, 0.95),
            Err(ModelError::NoCovariance)
        );
    }
}
