//! Step-response tables for external plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sysid_core::ltimodel::{output_confidence_band, zoo, InitialState, ModelError, ModelFile};

use crate::error::{PipelineError, Result};

/// A zoo id or the path of a model file.
pub fn load_model(source: &str) -> Result<ModelFile> {
    match zoo::model_file(source) {
        Some(f) => Ok(f),
        None => Ok(ModelFile::load(Path::new(source))?),
    }
}

/// Writes `<label>_<input>.csv` for every requested input (all inputs when
/// `inputs` is empty) with columns `time,response` and, when the model
/// carries a covariance, `lower,upper` of the band at `level`. One amplitude
/// applies to every input; otherwise there must be one per input.
#[allow(clippy::too_many_arguments)]
pub fn emit_step_responses(
    model: &ModelFile,
    label: &str,
    inputs: &[String],
    amplitudes: &[f64],
    horizon: f64,
    sample_period: f64,
    level: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let m = &model.model;
    let inputs: Vec<String> = if inputs.is_empty() {
        m.inputs().map(str::to_string).collect()
    } else {
        inputs.to_vec()
    };
    for i in &inputs {
        if m.path(i).is_none() {
            return Err(ModelError::MissingInput(i.clone()).into());
        }
    }
    let amplitude = |k: usize| match amplitudes {
        [] => Ok(1.0),
        [a] => Ok(*a),
        many if many.len() == inputs.len() => Ok(many[k]),
        many => Err(PipelineError::Validation(format!(
            "{} amplitudes for {} inputs",
            many.len(),
            inputs.len()
        ))),
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let a = amplitude(k)?;
        let step = m.step_response(input, a, horizon, sample_period)?;
        let n = step.values.len();
        let band = if m.covariance.is_some() {
            let signals: BTreeMap<String, Vec<f64>> = m
                .inputs()
                .map(|name| (name.to_string(), vec![if name == input { a } else { 0.0 }; n]))
                .collect();
            Some(output_confidence_band(m, &signals, n, sample_period, &InitialState::Zero, level)?)
        } else {
            None
        };
        let path = out_dir.join(format!("{label}_{input}.csv"));
        let mut text = String::from(if band.is_some() {
            "time,response,lower,upper\n"
        } else {
            "time,response\n"
        });
        for t in 0..n {
            let time = t as f64 * sample_period;
            match &band {
                Some(b) => text.push_str(&format!(
                    "{time},{},{},{}\n",
                    step.values[t], b.lower[t], b.upper[t]
                )),
                None => text.push_str(&format!("{time},{}\n", step.values[t])),
            }
        }
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
