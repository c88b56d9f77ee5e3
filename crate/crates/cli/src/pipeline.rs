//! End-to-end identification runs: ingest, preprocess, split, standardize,
//! tune, final fit and evaluation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sysid_core::dataset::{
    assign_groups, rolling_mean_past, split_experiments, Channel, ChannelStats, DatasetWarning,
    ExperimentSet, Group, Record, Standardizer,
};
use sysid_core::estimator::{self, staged_fit, ConvergenceReport, ExperimentData, FitObjective};
use sysid_core::hypertune::{
    kfold_objective, tune, HyperParams, HyperSpace, TraceEntry, TuneOptions,
};
use sysid_core::ltimodel::{
    output_confidence_band, AlgebraicLink, Composite, CompositeNode, InitialState, MisoModel,
    Scaling,
};
use sysid_core::plant::{self, vars, FlueGasConstants};

use crate::config::{DeltaMode, RunConfig, TaskConfig, DELTA_INPUTS};
use crate::error::{PipelineError, Result, StageContext};
use crate::seeds;

/// Pooled fit quality over a group of experiments, standardized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub experiments: usize,
    pub samples: usize,
    /// Mean squared error over all samples of the group.
    pub mse: f64,
    pub r_squared: f64,
}

impl Metrics {
    pub fn of(predictions: &[&ExperimentPrediction]) -> Result<Self> {
        let pairs = predictions
            .iter()
            .map(|p| (p.measured.as_slice(), p.predicted.as_slice()));
        let r_squared = estimator::pooled_r_squared(pairs)?;
        let samples: usize = predictions.iter().map(|p| p.measured.len()).sum();
        let sse: f64 = predictions
            .iter()
            .flat_map(|p| p.measured.iter().zip(&p.predicted))
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        Ok(Self {
            experiments: predictions.len(),
            samples,
            mse: sse / samples as f64,
            r_squared,
        })
    }
}

/// Simulated output of one experiment, standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPrediction {
    pub experiment: usize,
    pub group: Group,
    /// Seconds.
    pub time: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Outcome of tuning and fitting one output.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub task: TaskConfig,
    /// In standardized coordinates.
    pub model: MisoModel,
    pub eta: HyperParams,
    pub best_j: f64,
    pub trace: Vec<TraceEntry>,
    pub report: ConvergenceReport,
    pub hit_pole_bound: bool,
    pub train: Metrics,
    pub test: Metrics,
    pub predictions: Vec<ExperimentPrediction>,
}

/// A record split into grouped experiments with training statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Physical units, after preprocessing.
    pub record: Record,
    pub set: ExperimentSet,
    pub standardizer: Standardizer,
    pub warning: Option<DatasetWarning>,
}

impl Prepared {
    /// Splits `record` and fits the standardization of `names` on the
    /// training experiments.
    pub fn new(record: Record, cfg: &RunConfig, names: &[&str]) -> Result<Self> {
        let s = &cfg.split;
        let split = split_experiments(&record, &s.setpoint, s.lead_time, s.threshold)?;
        let n = split.set.len();
        if n < s.test_experiments + s.folds {
            return Err(PipelineError::Validation(format!(
                "{n} experiments found, {} test experiments and {} folds need at least {}",
                s.test_experiments,
                s.folds,
                s.test_experiments + s.folds
            )));
        }
        let set = assign_groups(
            &split.set,
            s.test_experiments,
            s.folds,
            seeds::substream(cfg.seed, seeds::SPLIT),
        )?;
        let standardizer = Standardizer::fit(&record, &set.windows_of(&set.training()), names)?;
        Ok(Self {
            record,
            set,
            standardizer,
            warning: split.warning,
        })
    }

    pub fn stats(&self, name: &str) -> Result<ChannelStats> {
        Ok(self.standardizer.get(name)?)
    }

    pub fn scaling(&self, name: &str) -> Result<Scaling> {
        let s = self.stats(name)?;
        Ok(Scaling::Standardized {
            mean: s.mean,
            range: s.range,
        })
    }

    fn standardized(&self, name: &str) -> Result<Channel> {
        Ok(self.standardizer.apply(self.record.channel(name)?)?)
    }

    /// Every experiment in standardized coordinates, indexed like the set.
    pub fn experiments(&self, inputs: &[&str], output: &str) -> Result<Vec<ExperimentData>> {
        let mut channels = Vec::new();
        for name in inputs.iter().chain(std::iter::once(&output)) {
            channels.push(self.standardized(name)?);
        }
        let record = Record::new(channels, self.record.start_time)?;
        self.set
            .windows
            .iter()
            .map(|w| Ok(ExperimentData::from_record(&record, w.clone(), inputs, output)?))
            .collect()
    }

    fn times(&self, experiment: usize) -> Vec<f64> {
        let h = self.record.sample_period;
        self.set.windows[experiment]
            .clone()
            .map(|k| self.record.start_time + k as f64 * h)
            .collect()
    }
}

/// Replaces the disturbance inputs of a test experiment for multistep-ahead
/// prediction. `full` holds the standardized record-length signals.
fn substitute_deltas(
    data: &mut ExperimentData,
    window: std::ops::Range<usize>,
    full: &BTreeMap<String, Vec<f64>>,
    mode: DeltaMode,
    rolling_samples: usize,
) {
    if mode == DeltaMode::Measured {
        return;
    }
    for (name, values) in data.inputs.iter_mut() {
        if !DELTA_INPUTS.contains(&name.as_str()) {
            continue;
        }
        match mode {
            DeltaMode::Zero => values.iter_mut().for_each(|v| *v = 0.0),
            DeltaMode::RollingMean => {
                let mean = rolling_mean_past(&full[name], rolling_samples);
                values.copy_from_slice(&mean[window.clone()]);
            }
            DeltaMode::Measured => {}
        }
    }
}

fn fit_objective(cfg: &RunConfig) -> FitObjective {
    FitObjective {
        initial: InitialState::SteadyState,
        starts: cfg.tuning.starts,
        max_iterations: cfg.tuning.max_iterations,
        ..FitObjective::default()
    }
}

/// Settings evaluated before the first proposal: every input in stage 1 with
/// the fewest poles and the smallest lambda, the mandatory inputs alone, then
/// seeded random draws.
pub fn initial_points(space: &HyperSpace, count: usize, seed: u64) -> Vec<HyperParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (poles, lambda) = (space.poles.0, space.lambda_bounds.0);
    let mut points = vec![HyperParams::all_in_stage_one(space, poles, lambda)];
    let baseline = HyperParams::mandatory_only(space, poles, lambda);
    if count > 1 && baseline != points[0] {
        points.push(baseline);
    }
    while points.len() < count {
        points.push(space.sample(&mut rng).canonical(space));
    }
    points
}

/// Tunes and fits one output, then predicts every experiment.
pub fn identify(task: &TaskConfig, prepared: &Prepared, cfg: &RunConfig) -> Result<TaskOutcome> {
    let inputs = task.inputs();
    let data = prepared.experiments(&inputs, &task.output)?;
    let space = task.space(&cfg.tuning);
    let objective = fit_objective(cfg);
    let set = &prepared.set;
    let tag = format!("{}.{}", seeds::TUNING, task.output);
    let initial = initial_points(
        &space,
        cfg.tuning.initial_points.max(1),
        seeds::substream(cfg.seed, &format!("{tag}.initial")),
    );
    let options = TuneOptions {
        budget: cfg.tuning.budget,
        seed: seeds::substream(cfg.seed, &tag),
        ..TuneOptions::default()
    };
    log::info!("tuning `{}` over {} inputs", task.output, inputs.len());
    let outcome = tune(&space, &initial, &options, |eta| {
        kfold_objective(eta, set, &data, &task.output, &objective)
    })?;

    let train_idx = set.training();
    let train: Vec<ExperimentData> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let fit = staged_fit(&task.output, &outcome.best.stages(), &train, &objective)
        .stage("final fit")?;
    if fit.hit_pole_bound {
        log::warn!("final `{}` fit reached the time-constant bound", task.output);
    }

    let full: BTreeMap<String, Vec<f64>> = inputs
        .iter()
        .map(|n| Ok((n.to_string(), prepared.standardized(n)?.values)))
        .collect::<Result<_>>()?;
    let rolling = (cfg.prediction.rolling_window / prepared.record.sample_period).round() as usize;
    let mut predictions = Vec::with_capacity(set.len());
    for (i, e) in data.iter().enumerate() {
        let mut e = e.clone();
        if set.groups[i] == Group::Test {
            substitute_deltas(&mut e, set.windows[i].clone(), &full, cfg.prediction.delta_mode, rolling);
        }
        let (predicted, lower, upper) = simulate_with_band(&fit.model, &e, cfg.prediction.band_level)?;
        predictions.push(ExperimentPrediction {
            experiment: i,
            group: set.groups[i],
            time: prepared.times(i),
            measured: e.output,
            predicted,
            lower,
            upper,
        });
    }
    let group = |g: Group| -> Vec<&ExperimentPrediction> {
        predictions.iter().filter(|p| p.group == g).collect()
    };
    let train_metrics = Metrics::of(&group(Group::Train))?;
    let test_metrics = Metrics::of(&group(Group::Test))?;
    log::info!(
        "`{}`: train R^2 {:.4}, test R^2 {:.4}",
        task.output,
        train_metrics.r_squared,
        test_metrics.r_squared
    );
    Ok(TaskOutcome {
        task: task.clone(),
        model: fit.model,
        eta: outcome.best,
        best_j: outcome.best_j,
        trace: outcome.trace,
        report: fit.report,
        hit_pole_bound: fit.hit_pole_bound,
        train: train_metrics,
        test: test_metrics,
        predictions,
    })
}

type Band = (Vec<f64>, Vec<f64>, Vec<f64>);

fn simulate_with_band(model: &MisoModel, e: &ExperimentData, level: f64) -> Result<Band> {
    let initial = InitialState::SteadyState;
    if model.covariance.is_some() {
        let band =
            output_confidence_band(model, &e.inputs, e.len(), e.sample_period, &initial, level)?;
        return Ok((band.prediction, band.lower, band.upper));
    }
    let y = model.simulate_source(&e.inputs, e.len(), e.sample_period, &initial)?;
    Ok((y.clone(), y.clone(), y))
}

/// Result of a basic run.
#[derive(Clone, Debug)]
pub struct BasicRun {
    pub prepared: Prepared,
    pub outcome: TaskOutcome,
}

pub fn run_basic(cfg: &RunConfig) -> Result<BasicRun> {
    let mut cfg = cfg.clone();
    if cfg.tasks.is_empty() {
        cfg.tasks = vec![TaskConfig::basic()];
    }
    let cfg = &cfg;
    cfg.validate()?;
    let [task] = cfg.tasks.as_slice() else {
        return Err(PipelineError::Validation(format!(
            "run-basic needs exactly one task, got {}",
            cfg.tasks.len()
        )));
    };
    let record = cfg.read_record().stage("ingest")?;
    let mut names = task.inputs();
    names.push(&task.output);
    if !names.contains(&cfg.split.setpoint.as_str()) {
        names.push(&cfg.split.setpoint);
    }
    cfg.check_columns(&record, names.iter().copied())?;
    let prepared = Prepared::new(record, cfg, &names).stage("split")?;
    let outcome = identify(task, &prepared, cfg).stage(&format!("identify {}", task.output))?;
    Ok(BasicRun { prepared, outcome })
}

/// Adds the derived channels of the chained model: fuel flow from the ram
/// positions, flue-gas mass flow and `Gamma`.
pub fn preprocess(record: &mut Record, cfg: &RunConfig) -> Result<()> {
    let p = &cfg.preprocess;
    if !p.ram_channels.is_empty() {
        let flows = p
            .ram_channels
            .iter()
            .map(|n| Ok(plant::ram_to_fuel_flow(record.channel(n)?, p.ram_area)?))
            .collect::<Result<Vec<_>>>()?;
        record.upsert(plant::average_fuel_flows(&flows)?)?;
    }
    if p.flue_gas {
        let consts = FlueGasConstants::default();
        let g = |n: &str| record.channel(n).map(|c| c.values.clone());
        let (vp, vs) = (g(vars::V_PAIR)?, g(vars::V_SAIR)?);
        let (h2o, o2, co2) = (g(vars::H2O)?, g(vars::O2)?, g(vars::CO2)?);
        let m = (0..vp.len())
            .map(|t| {
                let comp = consts.composition(h2o[t], o2[t], co2[t]);
                plant::flue_gas_mass_flow(
                    &comp,
                    vp[t] * consts.air_flow_scale,
                    vs[t] * consts.air_flow_scale,
                )
                .map(|f| f.mass_flow)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        record.upsert(Channel::new(vars::M_FURN, "kg/s", m, record.sample_period))?;
    }
    if p.gamma {
        let t = &record.channel(vars::T_FURN)?.values;
        let m = &record.channel(vars::M_FURN)?.values;
        let gamma = t.iter().zip(m).map(|(a, b)| a * b).collect();
        record.upsert(Channel::new(vars::GAMMA, "K kg/s", gamma, record.sample_period))?;
    }
    Ok(())
}

/// Least-squares proportionality between standardized fuel flow and
/// setpoint over the training experiments.
pub fn fit_fuel_flow_gain(prepared: &Prepared, setpoint: &str) -> Result<f64> {
    let x = prepared.standardized(setpoint)?.values;
    let y = prepared.standardized(vars::V_WASTE)?.values;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for w in prepared.set.windows_of(&prepared.set.training()) {
        for k in w {
            sxy += x[k] * y[k];
            sxx += x[k] * x[k];
        }
    }
    if !(sxx > 0.0) {
        return Err(PipelineError::Numerical(
            "setpoint is identically zero over the training data".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Result of a comprehensive run.
#[derive(Clone, Debug)]
pub struct ComprehensiveRun {
    pub prepared: Prepared,
    pub outcomes: Vec<TaskOutcome>,
    pub fuel_flow_gain: Option<f64>,
    pub composite: Composite,
    /// Chained prediction of the last task's output.
    pub composite_predictions: Vec<ExperimentPrediction>,
    pub composite_train: Metrics,
    pub composite_test: Metrics,
}

pub fn run_comprehensive(cfg: &RunConfig) -> Result<ComprehensiveRun> {
    let mut cfg = cfg.clone();
    if cfg.tasks.is_empty() {
        cfg.tasks = TaskConfig::comprehensive();
    }
    cfg.validate()?;
    let mut record = cfg.read_record().stage("ingest")?;
    let mut raw: Vec<&str> = vec![cfg.split.setpoint.as_str()];
    raw.extend(cfg.preprocess.ram_channels.iter().map(String::as_str));
    if cfg.preprocess.flue_gas {
        raw.extend([vars::V_PAIR, vars::V_SAIR, vars::H2O, vars::O2, vars::CO2]);
    }
    if cfg.preprocess.gamma {
        raw.push(vars::T_FURN);
    }
    cfg.check_columns(&record, raw)?;
    preprocess(&mut record, &cfg).stage("preprocess")?;

    let mut names: Vec<&str> = vec![cfg.split.setpoint.as_str()];
    for t in &cfg.tasks {
        names.extend(t.inputs());
        names.push(&t.output);
    }
    let has_fuel = record.channel(vars::V_WASTE).is_ok();
    if has_fuel {
        names.push(vars::V_WASTE);
    }
    names.sort_unstable();
    names.dedup();
    cfg.check_columns(&record, names.iter().copied())?;
    let prepared = Prepared::new(record, &cfg, &names).stage("split")?;

    let fuel_flow_gain = if has_fuel {
        Some(fit_fuel_flow_gain(&prepared, &cfg.split.setpoint).stage("fuel-flow gain")?)
    } else {
        None
    };
    let mut outcomes = Vec::new();
    for task in &cfg.tasks {
        outcomes.push(identify(task, &prepared, &cfg).stage(&format!("identify {}", task.output))?);
    }

    let mut nodes: Vec<CompositeNode> = outcomes
        .iter()
        .map(|o| CompositeNode::Dynamic(o.model.clone()))
        .collect();
    if let Some(gain) = fuel_flow_gain {
        nodes.push(CompositeNode::Algebraic(AlgebraicLink::FuelFlow {
            gain,
            setpoint: cfg.split.setpoint.clone(),
            output: vars::V_WASTE.into(),
        }));
    }
    if cfg.preprocess.flue_gas {
        nodes.push(CompositeNode::Algebraic(AlgebraicLink::MassFlow(
            FlueGasConstants::default(),
        )));
    }
    if cfg.preprocess.gamma {
        nodes.push(CompositeNode::Algebraic(AlgebraicLink::Gamma));
    }
    let mut scaling = BTreeMap::new();
    for n in &names {
        scaling.insert(n.to_string(), prepared.scaling(n)?);
    }
    let composite = Composite { nodes, scaling };
    let final_output = cfg.tasks.last().expect("validated").output.clone();
    let composite_predictions =
        evaluate_composite(&composite, &prepared, &cfg, &final_output).stage("composite")?;
    let group = |g: Group| -> Vec<&ExperimentPrediction> {
        composite_predictions.iter().filter(|p| p.group == g).collect()
    };
    let composite_train = Metrics::of(&group(Group::Train))?;
    let composite_test = Metrics::of(&group(Group::Test))?;
    log::info!(
        "composite `{final_output}`: train R^2 {:.4}, test R^2 {:.4}",
        composite_train.r_squared,
        composite_test.r_squared
    );
    Ok(ComprehensiveRun {
        prepared,
        outcomes,
        fuel_flow_gain,
        composite,
        composite_predictions,
        composite_train,
        composite_test,
    })
}

/// Runs the chain on every experiment from its external signals only; the
/// output is compared in standardized units. The band is left at zero width.
fn evaluate_composite(
    composite: &Composite,
    prepared: &Prepared,
    cfg: &RunConfig,
    output: &str,
) -> Result<Vec<ExperimentPrediction>> {
    let produced: Vec<String> = composite.nodes.iter().map(CompositeNode::produces).collect();
    let mut external: Vec<String> = Vec::new();
    for node in &composite.nodes {
        for r in node.requires() {
            if !produced.contains(&r) && !external.contains(&r) {
                external.push(r);
            }
        }
    }
    let stats = prepared.stats(output)?;
    let h = prepared.record.sample_period;
    let rolling = (cfg.prediction.rolling_window / h).round() as usize;
    let set = &prepared.set;
    let mut out = Vec::with_capacity(set.len());
    for (i, w) in set.windows.iter().enumerate() {
        let mut signals = BTreeMap::new();
        for name in &external {
            let full = &prepared.record.channel(name)?.values;
            let is_delta = DELTA_INPUTS.contains(&name.as_str());
            let values = match cfg.prediction.delta_mode {
                DeltaMode::Zero if is_delta && set.groups[i] == Group::Test => {
                    vec![prepared.stats(name)?.mean; w.len()]
                }
                DeltaMode::RollingMean if is_delta && set.groups[i] == Group::Test => {
                    rolling_mean_past(full, rolling)[w.clone()].to_vec()
                }
                _ => full[w.clone()].to_vec(),
            };
            signals.insert(name.clone(), values);
        }
        let result = composite.evaluate(&signals, h, &InitialState::SteadyState)?;
        let predicted: Vec<f64> = result[output].iter().map(|v| stats.standardize(*v)).collect();
        let measured: Vec<f64> = prepared.record.channel(output)?.values[w.clone()]
            .iter()
            .map(|v| stats.standardize(*v))
            .collect();
        out.push(ExperimentPrediction {
            experiment: i,
            group: set.groups[i],
            time: prepared.times(i),
            measured,
            lower: predicted.clone(),
            upper: predicted.clone(),
            predicted,
        });
    }
    Ok(out)
}
