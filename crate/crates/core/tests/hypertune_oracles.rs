use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sysid_core::dataset::{assign_groups, ExperimentSet};
use sysid_core::estimator::{mse, predict, staged_fit, ExperimentData, FitObjective};
use sysid_core::hypertune::{
    expected_improvement, kfold_objective, tune, CandidateInput, Evaluation, HyperParams,
    HyperSpace, TuneOptions,
};
use sysid_core::ltimodel::{InitialState, MisoModel, ProcessModel};

#[test]
fn expected_improvement_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let z = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..20 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.05..2.0);
        let best: f64 = rng.random_range(-2.0..2.0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let imp = (best - (mu + sigma * z.sample(&mut rng))).max(0.0);
            s += imp;
            s2 += imp * imp;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let ei = expected_improvement(mu, sigma, best);
        assert!((ei - mean).abs() <= 3.0 * se + 1e-12, "mu {mu} sigma {sigma} best {best}: {ei} vs {mean} +- {se}");
    }
    assert!((expected_improvement(0.7, 1.0, 0.7) - 0.39894).abs() < 1e-5);
}

fn small_problem() -> (ExperimentSet, Vec<ExperimentData>) {
    let truth = MisoModel::new("y")
        .with_path("a", ProcessModel::new(0.8, vec![150.0]))
        .with_path("b", ProcessModel::new(-0.3, vec![60.0, 20.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let data: Vec<ExperimentData> = (0..8)
        .map(|i| {
            let n = 200 + 20 * i;
            let mut inputs = BTreeMap::new();
            for (name, hold) in [("a", 40), ("b", 25), ("c", 30)] {
                let mut level = 0.0;
                let v: Vec<f64> = (0..n)
                    .map(|k| {
                        if k % hold == 0 {
                            level = rng.random_range(-1.0..1.0);
                        }
                        level
                    })
                    .collect();
                inputs.insert(name.to_string(), v);
            }
            let mut output = truth.simulate_source(&inputs, n, 5.0, &InitialState::Zero).unwrap();
            output.iter_mut().for_each(|y| *y += noise.sample(&mut rng));
            ExperimentData { inputs, output, sample_period: 5.0 }
        })
        .collect();
    let windows = (0..8).map(|i| 0..data[i].len()).collect();
    let set = assign_groups(&ExperimentSet::from_windows(windows), 2, 3, 17).unwrap();
    (set, data)
}

fn space() -> HyperSpace {
    HyperSpace {
        inputs: vec![
            CandidateInput { name: "a".into(), mandatory: true },
            CandidateInput { name: "b".into(), mandatory: false },
            CandidateInput { name: "c".into(), mandatory: false },
        ],
        max_stages: 2,
        poles: (1, 2),
        lambda_bounds: (1e-5, 1e-1),
    }
}

#[test]
fn kfold_objective_matches_a_naive_double_loop() {
    let (set, data) = small_problem();
    let space = space();
    let objective = FitObjective { max_iterations: 60, ..FitObjective::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let eta = space.sample(&mut rng).canonical(&space);
        let ev = kfold_objective(&eta, &set, &data, "y", &objective);

        let mut total = 0.0;
        let mut feasible = true;
        for k in 1..=set.fold_count() {
            let train: Vec<ExperimentData> = (0..data.len())
                .filter(|&i| set.folds[i].is_some() && set.folds[i] != Some(k))
                .map(|i| data[i].clone())
                .collect();
            let fit = staged_fit("y", &eta.stages(), &train, &objective).unwrap();
            feasible &= !fit.hit_pole_bound;
            for i in 0..data.len() {
                if set.folds[i] == Some(k) {
                    let y_hat = predict(&fit.model, std::slice::from_ref(&data[i]), &objective.initial).unwrap();
                    total += mse(&data[i].output, &y_hat[0]).unwrap();
                }
            }
        }
        let j = total / set.training().len() as f64;
        let got = ev.j.unwrap();
        assert!((got - j).abs() <= 1e-12 * j.max(1.0), "{got} vs {j}");
        assert_eq!(ev.feasible, feasible);
    }
}

#[test]
fn tuning_finds_the_brute_force_minimum_of_a_small_space() {
    let (set, data) = small_problem();
    let space = HyperSpace { lambda_bounds: (1e-4, 1e-4), ..space() };
    let objective = FitObjective { max_iterations: 60, starts: 2, ..FitObjective::default() };
    let all = space.enumerate().unwrap();
    let eval = |eta: &HyperParams| kfold_objective(eta, &set, &data, "y", &objective);
    let brute: Vec<(HyperParams, Evaluation)> = all.iter().map(|e| (e.clone(), eval(e))).collect();
    let best = brute
        .iter()
        .filter(|(_, e)| e.feasible)
        .min_by(|a, b| a.1.j.unwrap().total_cmp(&b.1.j.unwrap()))
        .unwrap();

    let options = TuneOptions { budget: all.len(), seed: 3, ..TuneOptions::default() };
    let initial = [HyperParams::all_in_stage_one(&space, 1, 1e-4)];
    let out = tune(&space, &initial, &options, eval).unwrap();
    assert_eq!(out.best, best.0);
    assert_eq!(out.best_j, best.1.j.unwrap());
    let mut prev = f64::INFINITY;
    for t in &out.trace {
        if let Some(j) = t.incumbent_j {
            assert!(j <= prev);
            prev = j;
        }
    }
}
