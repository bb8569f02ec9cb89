//! Error classes mapped onto distinct process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("input data error: {0}")]
    Data(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Solver(_) => 3,
            AppError::Io(_) => 4,
            AppError::Data(_) => 5,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<hyperflow_core::dmk::DmkError> for AppError {
    fn from(e: hyperflow_core::dmk::DmkError) -> Self {
        AppError::Solver(e.to_string())
    }
}

impl From<hyperflow_core::synth::SynthError> for AppError {
    fn from(e: hyperflow_core::synth::SynthError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<hyperflow_core::mesh::MeshError> for AppError {
    fn from(e: hyperflow_core::mesh::MeshError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<hyperflow_core::temporal::TemporalError> for AppError {
    fn from(e: hyperflow_core::temporal::TemporalError) -> Self {
        AppError::Solver(e.to_string())
    }
}

impl From<hyperflow_core::image::ImageError> for AppError {
    fn from(e: hyperflow_core::image::ImageError) -> Self {
        AppError::Data(e.to_string())
    }
}
