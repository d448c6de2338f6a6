use koopman_core::dataset::DatasetError;
use koopman_core::identification::IdentificationError;
use koopman_core::metrics::MetricsError;
use koopman_core::simulator::SimulationError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            CliError::Stage { .. } => self,
            other => CliError::Stage { stage, source: Box::new(other) },
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::UnknownSystem(_) | SimulationError::BadParamCount { .. } | SimulationError::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            SimulationError::DimensionMismatch(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<IdentificationError> for CliError {
    fn from(e: IdentificationError) -> Self {
        match e {
            IdentificationError::EmptySnapshotSet | IdentificationError::DimensionMismatch(_) | IdentificationError::ModelFile(_) => {
                CliError::Data(e.to_string())
            }
            IdentificationError::Basis(_) | IdentificationError::InvalidPeriod(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::AllSegmentsDiverged(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
