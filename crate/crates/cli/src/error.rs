use sysid_core::dataset::DatasetError;
use sysid_core::estimator::EstimatorError;
use sysid_core::hypertune::TuneError;
use sysid_core::ltimodel::ModelError;
use sysid_core::plant::PlantError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Process exit status for a failure: 1 for bad input, 2 for a numerical
/// failure during identification.
impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Numerical(_) | PipelineError::Tune(_) => 2,
            PipelineError::Plant(
                PlantError::NonPhysicalComposition(_) | PlantError::NegativeFraction { .. },
            ) => 2,
            PipelineError::Model(e) => model_exit_code(e),
            PipelineError::Estimator(e) => match e {
                EstimatorError::Model(m) => model_exit_code(m),
                EstimatorError::InvalidObjective(_)
                | EstimatorError::EmptyStageOne
                | EstimatorError::TooManyStages(_)
                | EstimatorError::LengthMismatch { .. } => 1,
                _ => 2,
            },
            PipelineError::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

fn model_exit_code(e: &ModelError) -> i32 {
    match e {
        ModelError::NonFiniteInput(_) | ModelError::Link(_) => 2,
        _ => 1,
    }
}

/// Attaches the pipeline stage to an error.
pub trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| PipelineError::Stage {
            stage: stage.to_string(),
            source: Box::new(e.into()),
        })
    }
}
