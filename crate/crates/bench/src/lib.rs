//! Fixtures shared by the benchmarks: seeded step-rich experiments from a
//! known two-input model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysid_core::estimator::ExperimentData;
use sysid_core::ltimodel::{InitialState, MisoModel, ProcessModel};

pub const SAMPLE_PERIOD: f64 = 5.0;

pub fn truth() -> MisoModel {
    MisoModel::new("y")
        .with_path("u", ProcessModel::new(0.9, vec![600.0]))
        .with_path("d", ProcessModel::new(-0.3, vec![200.0, 40.0]))
}

fn steps(rng: &mut ChaCha8Rng, n: usize, hold: usize) -> Vec<f64> {
    let mut level = 0.0;
    (0..n)
        .map(|k| {
            if k % hold == 0 {
                level = rng.random_range(-1.0..1.0);
            }
            level
        })
        .collect()
}

/// `count` experiments of `len` samples with 1% output noise.
pub fn experiments(count: usize, len: usize, seed: u64) -> Vec<ExperimentData> {
    let model = truth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let inputs: BTreeMap<String, Vec<f64>> = [
                ("u".to_string(), steps(&mut rng, len, 120)),
                ("d".to_string(), steps(&mut rng, len, 45)),
            ]
            .into_iter()
            .collect();
            let mut output = model
                .simulate_source(&inputs, len, SAMPLE_PERIOD, &InitialState::Zero)
                .expect("fixture inputs are complete");
            output.iter_mut().for_each(|y| *y += 0.01 * rng.random_range(-1.0..1.0));
            ExperimentData { inputs, output, sample_period: SAMPLE_PERIOD }
        })
        .collect()
}
