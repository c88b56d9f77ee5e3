//! Run configuration, read from TOML.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sysid_core::dataset::{CsvOptions, Record};
use sysid_core::hypertune::{CandidateInput, HyperSpace};
use sysid_core::plant::vars;

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Identification tasks. `run-basic` needs exactly one; an empty list in
    /// `run-comprehensive` selects the four subprocess tasks of the chained
    /// model.
    #[serde(default, rename = "task")]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    /// Signal name -> CSV column.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

/// One output and the inputs the tuner may use for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub output: String,
    /// Always identified in stage 1.
    pub mandatory: Vec<String>,
    #[serde(default)]
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Signal whose major changes delimit experiments.
    pub setpoint: String,
    /// Seconds before each major change where the cut is made.
    pub lead_time: f64,
    /// Smallest sample-to-sample change, as a fraction of the setpoint
    /// range, that counts as major.
    pub threshold: f64,
    pub test_experiments: usize,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            setpoint: vars::Q_STEAM_SP.to_string(),
            lead_time: 600.0,
            threshold: 0.1,
            test_experiments: 7,
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub budget: usize,
    /// Random settings evaluated before the first proposal.
    pub initial_points: usize,
    pub max_stages: u8,
    pub poles: (u8, u8),
    /// Equal bounds fix lambda.
    pub lambda: (f64, f64),
    pub starts: usize,
    pub max_iterations: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            budget: 300,
            initial_points: 5,
            max_stages: 3,
            poles: (1, 3),
            lambda: (1e-6, 1e2),
            starts: 5,
            max_iterations: 500,
        }
    }
}

/// How additional (disturbance) inputs are fed when predicting test
/// experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// The recorded signals.
    #[default]
    Measured,
    /// Mean of the measurements over the preceding window.
    RollingMean,
    /// Zero in standardized coordinates.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionConfig {
    pub delta_mode: DeltaMode,
    /// Seconds.
    pub rolling_window: f64,
    /// Coverage of the emitted confidence bands.
    pub band_level: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            delta_mode: DeltaMode::Measured,
            rolling_window: 3600.0,
            band_level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Ram-feeder position channels; when non-empty they are turned into
    /// the fuel-flow channel `V_waste`.
    pub ram_channels: Vec<String>,
    /// m^2.
    pub ram_area: f64,
    /// Compute `m_furn` from the flue-gas balance.
    pub flue_gas: bool,
    /// Compute `Gamma = T_furn * m_furn`.
    pub gamma: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            ram_channels: Vec::new(),
            ram_area: 1.0,
            flue_gas: true,
            gamma: true,
        }
    }
}

/// The disturbance-informative measurements.
pub const DELTA_INPUTS: [&str; 4] = [vars::T_PAIR, vars::H2O, vars::CO2, vars::O2];

impl TaskConfig {
    pub fn basic() -> Self {
        Self {
            output: vars::Q_STEAM.into(),
            mandatory: vec![vars::Q_STEAM_SP.into()],
            candidates: DELTA_INPUTS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Subprocess tasks of the chained model, in evaluation order.
    pub fn comprehensive() -> Vec<Self> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let mut delta_and_sp = vec![vars::Q_STEAM_SP];
        delta_and_sp.extend(DELTA_INPUTS);
        vec![
            Self {
                output: vars::V_PAIR.into(),
                mandatory: s(&[vars::Q_STEAM_SP]),
                candidates: s(&DELTA_INPUTS),
            },
            Self {
                output: vars::V_SAIR.into(),
                mandatory: s(&[vars::Q_STEAM_SP]),
                candidates: s(&DELTA_INPUTS),
            },
            Self {
                output: vars::T_FURN.into(),
                mandatory: s(&[vars::V_PAIR, vars::V_SAIR]),
                candidates: s(&delta_and_sp),
            },
            Self {
                output: vars::Q_STEAM.into(),
                mandatory: s(&[vars::GAMMA]),
                candidates: s(&[vars::M_FURN, vars::T_FURN]),
            },
        ]
    }

    pub fn inputs(&self) -> Vec<&str> {
        self.mandatory
            .iter()
            .chain(&self.candidates)
            .map(String::as_str)
            .collect()
    }

    pub fn space(&self, tuning: &TuningConfig) -> HyperSpace {
        HyperSpace {
            inputs: self
                .mandatory
                .iter()
                .map(|n| CandidateInput {
                    name: n.clone(),
                    mandatory: true,
                })
                .chain(self.candidates.iter().map(|n| CandidateInput {
                    name: n.clone(),
                    mandatory: false,
                }))
                .collect(),
            max_stages: tuning.max_stages,
            poles: tuning.poles,
            lambda_bounds: tuning.lambda,
        }
    }
}

impl RunConfig {
    /// A config for the basic model over `data`.
    pub fn basic(data: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            data: DataConfig {
                path: data.into(),
                timestamp_column: None,
                columns: BTreeMap::new(),
            },
            output_dir: output_dir.into(),
            seed,
            tasks: vec![TaskConfig::basic()],
            split: SplitConfig::default(),
            tuning: TuningConfig::default(),
            prediction: PredictionConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config; a relative data path is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        for t in &self.tasks {
            if t.mandatory.is_empty() {
                return bad(format!("task `{}` has no mandatory input", t.output));
            }
            let inputs = t.inputs();
            if inputs.contains(&t.output.as_str()) {
                return bad(format!("task `{}` uses its output as an input", t.output));
            }
            let mut seen = inputs.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != inputs.len() {
                return bad(format!("task `{}` lists an input twice", t.output));
            }
            t.space(&self.tuning)
                .validate()
                .map_err(|e| PipelineError::Validation(format!("task `{}`: {e}", t.output)))?;
        }
        let mut outputs: Vec<&str> = self.tasks.iter().map(|t| t.output.as_str()).collect();
        outputs.sort_unstable();
        outputs.dedup();
        if outputs.len() != self.tasks.len() {
            return bad("two tasks share an output".into());
        }
        let s = &self.split;
        if !(s.lead_time >= 0.0) || !(s.threshold > 0.0 && s.threshold < 1.0) {
            return bad("split lead_time must be >= 0 and threshold in (0, 1)".into());
        }
        if s.folds < 2 {
            return bad("at least 2 folds are needed".into());
        }
        if self.tuning.budget == 0 {
            return bad("tuning budget must be at least 1".into());
        }
        if self.tuning.starts == 0 || self.tuning.max_iterations == 0 {
            return bad("starts and max_iterations must be positive".into());
        }
        let p = &self.prediction;
        if !(p.rolling_window > 0.0) || !(p.band_level > 0.0 && p.band_level < 1.0) {
            return bad("rolling_window must be positive and band_level in (0, 1)".into());
        }
        if !self.preprocess.ram_channels.is_empty() && !(self.preprocess.ram_area > 0.0) {
            return bad("ram_area must be positive".into());
        }
        Ok(())
    }

    /// Reads the data file.
    pub fn read_record(&self) -> Result<Record> {
        let file = fs::File::open(&self.data.path).map_err(|e| {
            PipelineError::Validation(format!("{}: {e}", self.data.path.display()))
        })?;
        let options = CsvOptions {
            timestamp_column: self.data.timestamp_column.clone(),
            columns: self.data.columns.clone(),
        };
        Ok(Record::read_csv(file, &options)?)
    }

    /// Fails unless every named signal is in the record.
    pub fn check_columns<'a>(
        &self,
        record: &Record,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let have = record.names();
        let missing: Vec<&str> = names.into_iter().filter(|n| !have.contains(n)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(format!(
                "{}: missing column(s) {}",
                self.data.path.display(),
                missing.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
output_dir = "out"
seed = 3

[data]
path = "data.csv"

[[task]]
output = "Q_steam"
mandatory = ["Q_steam_SP"]
candidates = ["O2"]
"#,
        )
        .unwrap();
        assert_eq!(cfg.split.folds, 5);
        assert_eq!(cfg.prediction.delta_mode, DeltaMode::Measured);
        assert_eq!(cfg.tuning.budget, 300);
        cfg.validate().unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = RunConfig::basic("d.csv", "o", 1);
        cfg.tasks[0].candidates.push(vars::Q_STEAM_SP.into());
        assert!(matches!(cfg.validate(), Err(PipelineError::Validation(_))));
        let mut cfg = RunConfig::basic("d.csv", "o", 1);
        cfg.split.folds = 1;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("output_dir = 3").is_err());
    }
}
