//! Orchestration layer: configuration, manifests and the command
//! implementations behind the `hyperflow` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{run_batch, run_gen, run_image, run_props, run_solve};
pub use config::AppConfig;
pub use error::AppError;
