//! Bayesian optimization of identification hyperparameters.
//!
//! The surrogate models `ln J` with a Gaussian process over encoded
//! hyperparameters. Candidates are scored by Expected Improvement times the
//! probability of feasibility, estimated by a second GP regressed on `+-1`
//! feasibility labels.

mod gp;
mod objective;
mod space;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

pub use gp::{GaussianProcess, GpFitOptions, GpHyper, MIN_NOISE};
pub use objective::{kfold_objective, Evaluation};
pub use space::{CandidateInput, HyperParams, HyperSpace, InputChoice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("no feasible hyperparameter setting was found")]
    NoFeasiblePoint,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("invalid hyperparameter space: {0}")]
    InvalidSpace(String),
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Expected Improvement for minimization at a point with posterior mean `mu`
/// and standard deviation `sigma`, given the incumbent `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mu;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let n = standard_normal();
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// Probability of feasibility from a GP regressed on `+-1` labels.
pub fn probability_of_feasibility(mu: f64, var: f64) -> f64 {
    standard_normal().cdf(mu / (1.0 + var).sqrt())
}

/// One evaluated setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub eta: HyperParams,
    pub j: Option<f64>,
    pub feasible: bool,
}

/// Append-only record of evaluations and the incumbent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    /// Index of the best feasible observation.
    pub incumbent: Option<usize>,
}

impl ObservationSet {
    /// Appends and moves the incumbent when the point is feasible and
    /// strictly better. Returns whether the incumbent changed.
    pub fn push(&mut self, eta: HyperParams, eval: &Evaluation) -> bool {
        self.observations.push(Observation {
            eta,
            j: eval.j,
            feasible: eval.feasible && eval.j.is_some(),
        });
        let i = self.observations.len() - 1;
        let o = &self.observations[i];
        let better = o.feasible
            && o.j.is_some_and(|j| self.best_j().is_none_or(|b| j < b));
        if better {
            self.incumbent = Some(i);
        }
        better
    }

    pub fn best(&self) -> Option<&Observation> {
        self.incumbent.map(|i| &self.observations[i])
    }

    pub fn best_j(&self) -> Option<f64> {
        self.best().and_then(|o| o.j)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn contains(&self, eta: &HyperParams) -> bool {
        self.observations.iter().any(|o| &o.eta == eta)
    }
}

/// The fitted surrogate pair used by the acquisition.
pub struct Surrogate {
    objective: GaussianProcess,
    feasibility: Option<GaussianProcess>,
    /// Incumbent in the surrogate's (log) units.
    best: f64,
}

fn transform(j: f64) -> f64 {
    j.max(1e-300).ln()
}

impl Surrogate {
    /// Fits both GPs on the observations; `None` with fewer than two finite
    /// objective values.
    pub fn fit(
        data: &ObservationSet,
        space: &HyperSpace,
        warm: Option<&GpHyper>,
        options: &GpFitOptions,
        rng: &mut ChaCha8Rng,
    ) -> Option<Self> {
        let finite: Vec<&Observation> = data.observations.iter().filter(|o| o.j.is_some()).collect();
        if finite.len() < 2 {
            return None;
        }
        let x: Vec<Vec<f64>> = finite.iter().map(|o| o.eta.encode(space)).collect();
        let y: Vec<f64> = finite.iter().map(|o| transform(o.j.unwrap())).collect();
        let objective = GaussianProcess::fit(x, &y, warm, options, rng)?;

        let feasibility = if data.observations.iter().any(|o| !o.feasible) {
            let x: Vec<Vec<f64>> = data.observations.iter().map(|o| o.eta.encode(space)).collect();
            let labels: Vec<f64> = data
                .observations
                .iter()
                .map(|o| if o.feasible { 1.0 } else { -1.0 })
                .collect();
            let hyper = GpHyper {
                log_lengthscales: objective.hyper().log_lengthscales.clone(),
                log_signal_variance: 0.0,
                log_noise_variance: 0.1f64.ln(),
                mean: 0.0,
            };
            GaussianProcess::with_hyper(x, &labels, hyper, false)
        } else {
            None
        };
        // Without a feasible point the best finite value stands in.
        let best = data
            .best_j()
            .or_else(|| finite.iter().filter_map(|o| o.j).reduce(f64::min))
            .map(transform)?;
        Some(Self {
            objective,
            feasibility,
            best,
        })
    }

    pub fn objective_gp(&self) -> &GaussianProcess {
        &self.objective
    }

    /// EI times the probability of feasibility at encoded point `x`.
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        let (mu, var) = self.objective.predict(x);
        let ei = expected_improvement(mu, var.sqrt(), self.best);
        match &self.feasibility {
            Some(c) => {
                let (m, v) = c.predict(x);
                ei * probability_of_feasibility(m, v)
            }
            None => ei,
        }
    }
}

/// Candidate search settings for [`propose_next`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalOptions {
    pub random_candidates: usize,
    pub refine_top: usize,
    pub refine_steps: usize,
    /// Lambda move of a local step, as a fraction of the log range.
    pub lambda_step: f64,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        Self {
            random_candidates: 2000,
            refine_top: 10,
            refine_steps: 20,
            lambda_step: 0.05,
        }
    }
}

/// Next setting to evaluate: the maximizer of the acquisition over random
/// candidates (or the whole space when it is small and discrete), refined
/// by greedy moves to neighbouring settings. Observed settings are never
/// proposed. Without a surrogate the proposal is a random unobserved point.
/// Returns `None` when every setting of a finite space has been observed.
pub fn propose_next(
    surrogate: Option<&Surrogate>,
    data: &ObservationSet,
    space: &HyperSpace,
    options: &ProposalOptions,
    rng: &mut ChaCha8Rng,
) -> Option<HyperParams> {
    let enumerated = space.enumerate().filter(|all| all.len() <= options.random_candidates.max(1) * 4);
    let unobserved = |e: &HyperParams| !data.contains(e);

    let Some(s) = surrogate else {
        return match enumerated {
            Some(all) => {
                let free: Vec<HyperParams> = all.into_iter().filter(|e| unobserved(e)).collect();
                (!free.is_empty()).then(|| free[rand::Rng::random_range(rng, 0..free.len())].clone())
            }
            None => (0..1000).map(|_| space.sample(rng)).find(|e| unobserved(e)),
        };
    };

    let score = |e: &HyperParams| s.acquisition(&e.encode(space));
    let mut scored: Vec<(f64, HyperParams)> = match enumerated {
        Some(all) => all
            .into_iter()
            .filter(|e| unobserved(e))
            .map(|e| (score(&e), e))
            .collect(),
        None => {
            let mut v: Vec<(f64, HyperParams)> = Vec::with_capacity(options.random_candidates);
            for _ in 0..options.random_candidates {
                let e = space.sample(rng);
                if unobserved(&e) {
                    v.push((score(&e), e));
                }
            }
            v
        }
    };
    if scored.is_empty() {
        return None;
    }
    // Stable sort keeps the draw order among ties.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    for (start_score, start) in scored.iter().take(options.refine_top) {
        let mut cur = (*start_score, start.clone());
        for _ in 0..options.refine_steps {
            let next = space
                .neighbours(&cur.1, options.lambda_step)
                .into_iter()
                .filter(|e| unobserved(e))
                .map(|e| (score(&e), e))
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match next {
                Some(n) if n.0 > cur.0 => cur = n,
                _ => break,
            }
        }
        if cur.0 > best.0 {
            best = cur;
        }
    }
    Some(best.1)
}

/// Settings of the optimization loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    /// Number of proposed evaluations; initial points are not counted.
    pub budget: usize,
    pub seed: u64,
    pub proposal: ProposalOptions,
    #[serde(skip)]
    pub gp: GpFitOptions,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            budget: 300,
            seed: 0,
            proposal: ProposalOptions::default(),
            gp: GpFitOptions::default(),
        }
    }
}

/// One line of the tuning trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 0 for initial points, then 1, 2, ... for proposals.
    pub iteration: usize,
    pub eta: HyperParams,
    pub j: Option<f64>,
    pub feasible: bool,
    pub incumbent_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: HyperParams,
    pub best_j: f64,
    pub observations: ObservationSet,
    pub trace: Vec<TraceEntry>,
}

/// The optimization loop: evaluate the initial settings, then repeatedly
/// refit the surrogate, propose, evaluate and update the incumbent, for
/// `budget` proposals or until a finite space is exhausted.
pub fn tune(
    space: &HyperSpace,
    initial: &[HyperParams],
    options: &TuneOptions,
    mut evaluate: impl FnMut(&HyperParams) -> Evaluation,
) -> Result<TuneOutcome, TuneError> {
    space.validate().map_err(TuneError::InvalidSpace)?;
    if options.budget == 0 {
        return Err(TuneError::ZeroBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut data = ObservationSet::default();
    let mut trace = Vec::new();
    let mut record = |data: &mut ObservationSet, eta: HyperParams, iteration: usize, ev: Evaluation| {
        data.push(eta.clone(), &ev);
        log::info!(
            "iteration {iteration}: J = {:?}, feasible = {}, incumbent = {:?}",
            ev.j,
            ev.feasible,
            data.best_j()
        );
        trace.push(TraceEntry {
            iteration,
            eta,
            j: ev.j,
            feasible: ev.feasible && ev.j.is_some(),
            incumbent_j: data.best_j(),
            error: ev.error,
        });
    };
    for eta in initial {
        let eta = eta.canonical(space);
        if data.contains(&eta) {
            continue;
        }
        let ev = evaluate(&eta);
        record(&mut data, eta, 0, ev);
    }
    let mut warm: Option<GpHyper> = None;
    for it in 1..=options.budget {
        let surrogate = Surrogate::fit(&data, space, warm.as_ref(), &options.gp, &mut rng);
        if let Some(s) = &surrogate {
            warm = Some(s.objective_gp().hyper().clone());
        }
        let Some(eta) = propose_next(surrogate.as_ref(), &data, space, &options.proposal, &mut rng)
        else {
            log::info!("search space exhausted after {} evaluations", data.len());
            break;
        };
        let ev = evaluate(&eta);
        record(&mut data, eta, it, ev);
    }
    let best = data.best().ok_or(TuneError::NoFeasiblePoint)?;
    Ok(TuneOutcome {
        best: best.eta.clone(),
        best_j: best.j.expect("feasible observations carry J"),
        trace,
        observations: data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ei_at_the_incumbent_is_the_normal_density() {
        assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_4).abs() < 1e-9);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
        let mut prev = 0.0;
        for k in 1..50 {
            let e = expected_improvement(0.0, k as f64 * 0.1, 0.0);
            assert!(e > prev);
            prev = e;
        }
    }

    fn tiny_space() -> HyperSpace {
        HyperSpace {
            inputs: vec![
                CandidateInput { name: "a".into(), mandatory: false },
                CandidateInput { name: "b".into(), mandatory: false },
            ],
            max_stages: 2,
            poles: (1, 2),
            lambda_bounds: (1e-6, 1e-6),
        }
    }

    fn synthetic(eta: &HyperParams) -> Evaluation {
        // smooth function of the encoding with a unique minimum
        let x = eta.encode(&tiny_space());
        let target = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let j = 0.1 + x.iter().zip(target).map(|(a, b)| (a - b) * (a - b) * 1.3).sum::<f64>();
        Evaluation { j: Some(j), feasible: true, held_out: vec![], error: None }
    }

    #[test]
    fn exhaustive_budget_finds_the_brute_force_minimum() {
        let space = tiny_space();
        let all = space.enumerate().unwrap();
        let brute = all
            .iter()
            .min_by(|a, b| synthetic(a).j.unwrap().total_cmp(&synthetic(b).j.unwrap()))
            .unwrap();
        let out = tune(
            &space,
            &[],
            &TuneOptions { budget: all.len(), seed: 3, ..Default::default() },
            synthetic,
        )
        .unwrap();
        assert_eq!(&out.best, brute);
        assert_eq!(out.observations.len(), all.len());
    }

    #[test]
    fn incumbent_never_increases_and_no_duplicates() {
        let space = HyperSpace::new(&["sp"], &["a", "b"]);
        let f = |eta: &HyperParams| {
            let x = eta.encode(&space);
            let j = 0.2 + x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2)).sum::<f64>();
            Evaluation { j: Some(j), feasible: x[0] < 0.5 || x.len().is_multiple_of(2), held_out: vec![], error: None }
        };
        let out = tune(&space, &[], &TuneOptions { budget: 25, seed: 11, ..Default::default() }, f).unwrap();
        let inc: Vec<f64> = out.trace.iter().filter_map(|t| t.incumbent_j).collect();
        assert!(inc.windows(2).all(|w| w[1] <= w[0]));
        for (i, a) in out.observations.observations.iter().enumerate() {
            for b in &out.observations.observations[i + 1..] {
                assert_ne!(a.eta, b.eta);
            }
        }
    }

    #[test]
    fn budget_one_evaluates_once() {
        let space = tiny_space();
        let mut calls = 0;
        let out = tune(&space, &[], &TuneOptions { budget: 1, seed: 0, ..Default::default() }, |e| {
            calls += 1;
            synthetic(e)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.observations.incumbent, Some(0));
    }

    #[test]
    fn infeasible_everywhere_is_an_error() {
        let space = tiny_space();
        let r = tune(&space, &[], &TuneOptions { budget: 3, seed: 0, ..Default::default() }, |_| {
            Evaluation { j: Some(1.0), feasible: false, held_out: vec![], error: None }
        });
        assert_eq!(r.unwrap_err(), TuneError::NoFeasiblePoint);
    }
}
