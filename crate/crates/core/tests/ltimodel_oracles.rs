use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sysid_core::ltimodel::{output_confidence_band, zoo, InitialState, MisoModel, ProcessModel};

/// Linear interpolation of a sampled trace at time `t`.
fn at(values: &[f64], h: f64, t: f64) -> f64 {
    let k = (t / h).floor() as usize;
    let frac = t / h - k as f64;
    values[k] + frac * (values[k + 1] - values[k])
}

#[test]
fn zoo_step_responses_match_the_printed_parameters() {
    let h = 5.0;
    let mut single_pole = 0;
    for (id, file) in zoo::all() {
        for path in &file.model.paths {
            let p = &path.process;
            let slowest = p.time_constants.iter().copied().fold(0.0, f64::max);
            let horizon = (40.0 * slowest).max(100.0);
            let y = file.model.step_response(&path.input, 1.0, horizon, h).unwrap().values;
            let last = *y.last().unwrap();
            assert!((last - p.gain).abs() <= 1e-3 * p.gain.abs(), "{id}/{}: {last} vs {}", path.input, p.gain);
            if let [t] = p.time_constants.as_slice() {
                single_pole += 1;
                let expect = p.gain * (1.0 - (-1.0f64).exp());
                let got = at(&y, h, *t);
                assert!((got - expect).abs() <= 5e-3 * expect.abs(), "{id}/{}: {got} vs {expect}", path.input);
            }
        }
    }
    assert!(single_pole >= 10);

    let basic = zoo::basic();
    let y = basic.step_response("Q_steam_SP", 1.0, 3000.0, h).unwrap().values;
    assert!((at(&y, h, 1525.2) - 0.62402).abs() < 5e-4);
}

fn band_model(cov: Vec<Vec<f64>>) -> MisoModel {
    let mut m = MisoModel::new("y").with_path("u", ProcessModel::new(1.2, vec![300.0]));
    m.covariance = Some(cov);
    m
}

#[test]
fn delta_method_band_agrees_with_parameter_sampling() {
    let cov = vec![vec![4e-4, 0.06], vec![0.06, 25.0]];
    let model = band_model(cov.clone());
    let n = 400;
    let u: Vec<f64> = (0..n).map(|k| if (k / 80) % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let source: BTreeMap<String, Vec<f64>> = [("u".to_string(), u)].into_iter().collect();
    let band = output_confidence_band(&model, &source, n, 5.0, &InitialState::Zero, 0.95).unwrap();

    // Sample (K, T) from N(theta, cov) through its Cholesky factor.
    let l11 = cov[0][0].sqrt();
    let l21 = cov[1][0] / l11;
    let l22 = (cov[1][1] - l21 * l21).sqrt();
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    let mut samples: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(draws)).collect();
    for _ in 0..draws {
        let (a, b) = (z.sample(&mut rng), z.sample(&mut rng));
        let k = 1.2 + l11 * a;
        let t = 300.0 + l21 * a + l22 * b;
        let m = MisoModel::new("y").with_path("u", ProcessModel::new(k, vec![t]));
        let y = m.simulate_source(&source, n, 5.0, &InitialState::Zero).unwrap();
        for (s, v) in samples.iter_mut().zip(y) {
            s.push(v);
        }
    }
    let half = band.half_width();
    let mut checked = 0;
    for (i, s) in samples.iter_mut().enumerate() {
        if half[i] < 1e-3 {
            continue;
        }
        s.sort_by(f64::total_cmp);
        let lo = s[(0.025 * draws as f64) as usize];
        let hi = s[(0.975 * draws as f64) as usize];
        let mc = 0.5 * (hi - lo);
        assert!((mc - half[i]).abs() <= 0.1 * half[i], "t = {i}: {mc} vs {}", half[i]);
        checked += 1;
    }
    assert!(checked > n / 2);
}

#[test]
fn zero_covariance_gives_a_zero_width_band() {
    let model = band_model(vec![vec![0.0; 2]; 2]);
    let source: BTreeMap<String, Vec<f64>> = [("u".to_string(), vec![1.0; 50])].into_iter().collect();
    let band = output_confidence_band(&model, &source, 50, 5.0, &InitialState::Zero, 0.95).unwrap();
    assert_eq!(band.lower, band.prediction);
    assert_eq!(band.upper, band.prediction);
}
