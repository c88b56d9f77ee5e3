//! Run artifacts and the metrics report.
//!
//! A run directory holds `config.toml`, `model.json`, `metrics.json`,
//! `hyperparams.json`, `trace.jsonl` and one prediction CSV per experiment
//! and output under `predictions/`. Nothing in it depends on wall-clock
//! time, so identical configs give identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sysid_core::dataset::{ChannelStats, DatasetWarning, Group};
use sysid_core::hypertune::HyperParams;
use sysid_core::ltimodel::ModelFile;

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::pipeline::{BasicRun, ComprehensiveRun, ExperimentPrediction, Metrics, Prepared, TaskOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub experiments: usize,
    /// Sample ranges `[start, end)`.
    pub windows: Vec<(usize, usize)>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub train: Metrics,
    pub test: Metrics,
    /// Cross-validated objective of the selected hyperparameters.
    pub best_j: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub hit_pole_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeReport {
    pub output: String,
    pub train: Metrics,
    pub test: Metrics,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: String,
    pub split: SplitSummary,
    pub tasks: BTreeMap<String, TaskReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_flow_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<CompositeReport>,
}

fn split_summary(p: &Prepared) -> SplitSummary {
    SplitSummary {
        experiments: p.set.len(),
        windows: p.set.windows.iter().map(|w| (w.start, w.end)).collect(),
        train: p.set.training(),
        test: p.set.test(),
        folds: p.set.folds.clone(),
        warning: p.warning.map(|w| match w {
            DatasetWarning::NoChangesDetected => "no major setpoint change detected".to_string(),
        }),
    }
}

fn task_report(o: &TaskOutcome) -> TaskReport {
    TaskReport {
        train: o.train,
        test: o.test,
        best_j: o.best_j,
        evaluations: o.trace.len(),
        converged: o.report.converged,
        hit_pole_bound: o.hit_pole_bound,
    }
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn model_file(o: &TaskOutcome, p: &Prepared) -> Result<ModelFile> {
    let mut file = ModelFile::new(o.model.clone());
    for name in o.task.inputs().into_iter().chain([o.task.output.as_str()]) {
        file.scaling.insert(name.to_string(), p.scaling(name)?);
    }
    Ok(file)
}

fn group_name(g: Group) -> &'static str {
    match g {
        Group::Train => "train",
        Group::Test => "test",
    }
}

/// One CSV per experiment: standardized measured and predicted output, the
/// band, and both series mapped back to physical units.
fn write_predictions(dir: &Path, predictions: &[ExperimentPrediction], stats: ChannelStats) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in predictions {
        let path = dir.join(format!("experiment_{:02}.csv", p.experiment));
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        w.write_record([
            "time",
            "group",
            "measured",
            "predicted",
            "lower",
            "upper",
            "measured_physical",
            "predicted_physical",
        ])
        .map_err(csv_error)?;
        for k in 0..p.time.len() {
            w.write_record([
                p.time[k].to_string(),
                group_name(p.group).to_string(),
                p.measured[k].to_string(),
                p.predicted[k].to_string(),
                p.lower[k].to_string(),
                p.upper[k].to_string(),
                stats.unstandardize(p.measured[k]).to_string(),
                stats.unstandardize(p.predicted[k]).to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e.to_string()))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    output: &'a str,
    #[serde(flatten)]
    entry: &'a sysid_core::hypertune::TraceEntry,
}

fn write_common(cfg: &RunConfig, outcomes: &[&TaskOutcome], prepared: &Prepared) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut trace = String::new();
    let mut hyper: BTreeMap<&str, &HyperParams> = BTreeMap::new();
    for o in outcomes {
        for entry in &o.trace {
            trace.push_str(&serde_json::to_string(&TraceLine {
                output: &o.task.output,
                entry,
            })?);
            trace.push('\n');
        }
        hyper.insert(&o.task.output, &o.eta);
        write_predictions(
            &dir.join("predictions").join(&o.task.output),
            &o.predictions,
            prepared.stats(&o.task.output)?,
        )?;
    }
    fs::write(dir.join("trace.jsonl"), trace)?;
    fs::write(dir.join("hyperparams.json"), json_text(&hyper)?)?;
    Ok(dir)
}

pub fn write_basic(run: &BasicRun, cfg: &RunConfig) -> Result<MetricsReport> {
    let o = &run.outcome;
    let dir = write_common(cfg, &[o], &run.prepared)?;
    fs::write(dir.join("model.json"), model_file(o, &run.prepared)?.to_json())?;
    let report = MetricsReport {
        kind: "basic".into(),
        split: split_summary(&run.prepared),
        tasks: [(o.task.output.clone(), task_report(o))].into_iter().collect(),
        fuel_flow_gain: None,
        composite: None,
    };
    fs::write(dir.join("metrics.json"), json_text(&report)?)?;
    Ok(report)
}

pub fn write_comprehensive(run: &ComprehensiveRun, cfg: &RunConfig) -> Result<MetricsReport> {
    let outcomes: Vec<&TaskOutcome> = run.outcomes.iter().collect();
    let dir = write_common(cfg, &outcomes, &run.prepared)?;
    fs::write(dir.join("model.json"), json_text(&run.composite)?)?;
    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    for o in &run.outcomes {
        fs::write(
            models.join(format!("{}.json", o.task.output)),
            model_file(o, &run.prepared)?.to_json(),
        )?;
    }
    let output = outcomes.last().expect("at least one task").task.output.clone();
    write_predictions(
        &dir.join("predictions").join("composite"),
        &run.composite_predictions,
        run.prepared.stats(&output)?,
    )?;
    let report = MetricsReport {
        kind: "comprehensive".into(),
        split: split_summary(&run.prepared),
        tasks: run
            .outcomes
            .iter()
            .map(|o| (o.task.output.clone(), task_report(o)))
            .collect(),
        fuel_flow_gain: run.fuel_flow_gain,
        composite: Some(CompositeReport {
            output,
            train: run.composite_train,
            test: run.composite_test,
        }),
    };
    fs::write(dir.join("metrics.json"), json_text(&report)?)?;
    Ok(report)
}

pub fn read_metrics(run_dir: &Path) -> Result<MetricsReport> {
    let path = run_dir.join("metrics.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_prediction_csv(path: &Path, experiment: usize) -> Result<ExperimentPrediction> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let mut p = ExperimentPrediction {
        experiment,
        group: Group::Train,
        time: Vec::new(),
        measured: Vec::new(),
        predicted: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let bad = |m: String| PipelineError::Validation(format!("{}: {m}", path.display()));
    for row in r.records() {
        let row = row.map_err(csv_error)?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("bad value in column {i}")))
        };
        p.group = match row.get(1) {
            Some("test") => Group::Test,
            Some("train") => Group::Train,
            other => return Err(bad(format!("unknown group {other:?}"))),
        };
        p.time.push(num(0)?);
        p.measured.push(num(2)?);
        p.predicted.push(num(3)?);
        p.lower.push(num(4)?);
        p.upper.push(num(5)?);
    }
    Ok(p)
}

/// Train and test metrics recomputed from the prediction CSVs of every
/// output directory under `predictions/`.
pub fn recompute_metrics(run_dir: &Path) -> Result<BTreeMap<String, (Metrics, Metrics)>> {
    let mut out = BTreeMap::new();
    let root = run_dir.join("predictions");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let preds = files
            .iter()
            .enumerate()
            .map(|(i, f)| read_prediction_csv(f, i))
            .collect::<Result<Vec<_>>>()?;
        let pick = |g: Group| preds.iter().filter(|p| p.group == g).collect::<Vec<_>>();
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, (Metrics::of(&pick(Group::Train))?, Metrics::of(&pick(Group::Test))?));
    }
    Ok(out)
}

/// Table of the metrics in a run directory, with the largest deviation of
/// the reported values from the ones recomputed from the prediction CSVs.
pub fn render_report(run_dir: &Path) -> Result<(String, f64)> {
    let report = read_metrics(run_dir)?;
    let recomputed = recompute_metrics(run_dir)?;
    let mut rows: Vec<(String, Metrics, Metrics)> = report
        .tasks
        .iter()
        .map(|(k, t)| (k.clone(), t.train, t.test))
        .collect();
    if let Some(c) = &report.composite {
        rows.push(("composite".into(), c.train, c.test));
    }
    let mut text = String::new();
    writeln!(text, "{} run, {} experiments ({} train, {} test)",
        report.kind, report.split.experiments, report.split.train.len(), report.split.test.len()).unwrap();
    writeln!(text, "{:<12} {:>12} {:>12} {:>10} {:>10}", "output", "MSE train", "MSE test", "R2 train", "R2 test").unwrap();
    let mut deviation: f64 = 0.0;
    for (name, train, test) in rows {
        writeln!(
            text,
            "{:<12} {:>12.3e} {:>12.3e} {:>9.2}% {:>9.2}%",
            name,
            train.mse,
            test.mse,
            100.0 * train.r_squared,
            100.0 * test.r_squared
        )
        .unwrap();
        let (rt, rv) = recomputed
            .get(&name)
            .ok_or_else(|| PipelineError::Validation(format!("no predictions for `{name}`")))?;
        for (a, b) in [(train, rt), (test, rv)] {
            deviation = deviation
                .max((a.mse - b.mse).abs())
                .max((a.r_squared - b.r_squared).abs());
        }
    }
    if let Some(k) = report.fuel_flow_gain {
        writeln!(text, "fuel-flow gain K_P = {k:.5}").unwrap();
    }
    writeln!(text, "largest deviation from prediction files: {deviation:.2e}").unwrap();
    Ok((text, deviation))
}
