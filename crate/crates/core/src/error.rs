use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::synth::SynthError;
use crate::train::{CheckpointError, TrainError};

/// Process exit status of the command-line tool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Top-level error, classified by exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtrError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CtrError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CtrError::Config(_) => ExitCode::Config,
            CtrError::Data(_) => ExitCode::Data,
            CtrError::Numeric(_) => ExitCode::Numeric,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CtrError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<DatasetError> for CtrError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidSplit(_) => CtrError::Config(e.to_string()),
            _ => CtrError::Data(e.to_string()),
        }
    }
}

impl From<FeatureError> for CtrError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::DuplicateField(_) | FeatureError::InvalidSchema(_) => CtrError::Config(e.to_string()),
            _ => CtrError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CtrError {
    fn from(e: SynthError) -> Self {
        CtrError::Config(e.to_string())
    }
}

impl From<ModelError> for CtrError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Feature(f) => f.into(),
            _ => CtrError::Config(e.to_string()),
        }
    }
}

impl From<MetricError> for CtrError {
    fn from(e: MetricError) -> Self {
        CtrError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CtrError {
    fn from(e: CheckpointError) -> Self {
        CtrError::Data(e.to_string())
    }
}

impl From<TrainError> for CtrError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteParams { .. } | TrainError::Autodiff(_) => {
                CtrError::Numeric(e.to_string())
            }
            TrainError::InvalidConfig(_) => CtrError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::EmptyTrainingSet | TrainError::Checkpoint(_) => CtrError::Data(e.to_string()),
        }
    }
}
