use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MisoModel, ModelError};

/// Map between physical values and model coordinates for one variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    /// `x_model = x / reference - offset`.
    OffsetReference { offset: f64, reference: f64 },
    /// `x_model = (x - mean) / range`.
    Standardized { mean: f64, range: f64 },
}

impl Scaling {
    pub fn to_model(&self, physical: f64) -> f64 {
        match *self {
            Scaling::OffsetReference { offset, reference } => physical / reference - offset,
            Scaling::Standardized { mean, range } => (physical - mean) / range,
        }
    }

    pub fn from_model(&self, value: f64) -> f64 {
        match *self {
            Scaling::OffsetReference { offset, reference } => (value + offset) * reference,
            Scaling::Standardized { mean, range } => value * range + mean,
        }
    }

    pub fn to_model_all(&self, physical: &[f64]) -> Vec<f64> {
        physical.iter().map(|v| self.to_model(*v)).collect()
    }

    pub fn from_model_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.from_model(*v)).collect()
    }
}

/// On-disk model: the MISO model plus the scaling of every variable it uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: MisoModel,
    #[serde(default)]
    pub scaling: BTreeMap<String, Scaling>,
}

impl ModelFile {
    pub fn new(model: MisoModel) -> Self {
        Self {
            model,
            scaling: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        file.model.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))
    }
}
