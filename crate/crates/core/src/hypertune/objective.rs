use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::dataset::ExperimentSet;
use crate::estimator::{self, mse, staged_fit, ExperimentData, FitObjective};

/// Result of evaluating one hyperparameter setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `None` when a fold fit failed.
    pub j: Option<f64>,
    pub feasible: bool,
    /// Held-out MSE of every training experiment, keyed by experiment index.
    #[serde(skip)]
    pub held_out: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Evaluation {
    pub fn failed(error: impl Into<String>) -> Self {
        Self {
            j: None,
            feasible: false,
            held_out: Vec::new(),
            error: Some(error.into()),
        }
    }
}

/// Held-out MSE per experiment of one fold, and whether its fit hit a pole bound.
type FoldResult = (Vec<(usize, f64)>, bool);

/// Cross-validated identification error of `eta`.
///
/// For every fold the staged fit runs on the other folds' experiments and
/// is scored on the held-out ones; `J` is the sum of held-out MSEs divided
/// by the number of training experiments. A fold whose fit hits the pole
/// bound makes the setting infeasible; a fold whose fit fails makes the
/// evaluation fail. `data` is indexed like the experiment set.
pub fn kfold_objective(
    eta: &HyperParams,
    folds: &ExperimentSet,
    data: &[ExperimentData],
    output: &str,
    objective: &FitObjective,
) -> Evaluation {
    let k = folds.fold_count();
    if k < 2 {
        return Evaluation::failed(format!("{k} folds, at least 2 are needed"));
    }
    if data.len() != folds.len() {
        return Evaluation::failed("experiment data does not match the experiment set");
    }
    let stages = eta.stages();
    let per_fold: Vec<Result<FoldResult, String>> = (1..=k)
        .into_par_iter()
        .map(|fold| {
            let held = folds.fold_members(fold);
            let train: Vec<ExperimentData> = folds
                .training()
                .into_iter()
                .filter(|i| folds.folds[*i] != Some(fold))
                .map(|i| data[i].clone())
                .collect();
            let fit = staged_fit(output, &stages, &train, objective).map_err(|e| e.to_string())?;
            let held_data: Vec<ExperimentData> = held.iter().map(|&i| data[i].clone()).collect();
            let pred = estimator::predict(&fit.model, &held_data, &objective.initial)
                .map_err(|e| e.to_string())?;
            let scores = held
                .iter()
                .zip(&held_data)
                .zip(&pred)
                .map(|((&i, e), y_hat)| Ok((i, mse(&e.output, y_hat).map_err(|e| e.to_string())?)))
                .collect::<Result<Vec<_>, String>>()?;
            Ok((scores, fit.hit_pole_bound))
        })
        .collect();

    let mut held_out = Vec::new();
    let mut feasible = true;
    for (fold, r) in per_fold.into_iter().enumerate() {
        match r {
            Ok((scores, hit)) => {
                held_out.extend(scores);
                feasible &= !hit;
            }
            Err(e) => return Evaluation::failed(format!("fold {}: {e}", fold + 1)),
        }
    }
    let n_e = folds.training().len() as f64;
    let j = held_out.iter().map(|(_, m)| m).sum::<f64>() / n_e;
    Evaluation {
        j: Some(j),
        feasible,
        held_out,
        error: None,
    }
}
