//! Single-document JSON configuration with sections for every stage.
//!
//! Every section and field is optional; omitted fields take the documented
//! defaults. Unknown fields are rejected so typos surface as parse errors
//! with line/column positions.

use crate::error::AppError;
use hyperflow_core::dmk::SolverConfig;
use hyperflow_core::image::ImageAnalysisConfig;
use hyperflow_core::synth::ProblemParams;
use hyperflow_core::temporal::AnalysisConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub image: ImageSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub n_div: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { n_div: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub beta: f64,
    /// Forward-Euler step; when absent the β-scaled default applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub max_iter: usize,
    pub tau: f64,
    pub mu_floor: f64,
    pub linear_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            beta: base.beta,
            dt: None,
            max_iter: base.max_iter,
            tau: base.tau,
            mu_floor: base.mu_floor,
            linear_tol: base.linear_tol,
        }
    }
}

impl SolverSection {
    pub fn to_solver_config(&self, beta: f64) -> SolverConfig {
        SolverConfig {
            beta,
            dt: self.dt.unwrap_or_else(|| SolverConfig::default_dt(beta)),
            max_iter: self.max_iter,
            tau: self.tau,
            mu_floor: self.mu_floor,
            linear_tol: self.linear_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionSection {
    pub threshold_ratio: f64,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        Self {
            threshold_ratio: AnalysisConfig::default().threshold_ratio,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub s_values: Vec<usize>,
    pub p: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let base = AnalysisConfig::default();
        Self {
            s_values: base.s_values,
            p: base.p,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub seed: u64,
    pub n_sinks: usize,
    /// Defaults to the mesh resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_grid_divisions: Option<usize>,
    /// Defaults to 1.5 mesh cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            seed: 42,
            n_sinks: 15,
            sample_grid_divisions: None,
            radius: None,
        }
    }
}

impl ProblemSection {
    pub fn to_params(&self, n_div: usize) -> ProblemParams {
        ProblemParams {
            seed: self.seed,
            sample_grid_divisions: self.sample_grid_divisions.unwrap_or(n_div),
            n_sinks: self.n_sinks,
            radius: self.radius.unwrap_or(1.5 / n_div as f64),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_problems: usize,
    pub betas: Vec<f64>,
    pub master_seed: u64,
    pub n_sinks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_grid_divisions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n_problems: 10,
            betas: vec![1.2, 1.5, 1.8],
            master_seed: 42,
            n_sinks: 15,
            sample_grid_divisions: None,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSection {
    pub intensity_threshold: f64,
    pub downsample: usize,
    pub s_values: Vec<usize>,
    pub moving_average_window: usize,
    pub permissive: bool,
}

impl Default for ImageSection {
    fn default() -> Self {
        let base = ImageAnalysisConfig::default();
        Self {
            intensity_threshold: base.intensity_threshold,
            downsample: base.downsample,
            s_values: base.s_values,
            moving_average_window: base.moving_average_window,
            permissive: base.permissive,
        }
    }
}

impl ImageSection {
    pub fn to_image_config(&self) -> ImageAnalysisConfig {
        ImageAnalysisConfig {
            intensity_threshold: self.intensity_threshold,
            downsample: self.downsample,
            s_values: self.s_values.clone(),
            moving_average_window: self.moving_average_window,
            permissive: self.permissive,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Write per-step conductivity snapshots under steps/.
    pub emit_snapshots: bool,
    /// Write per-step hypergraph JSONs under hypergraphs/.
    pub emit_hypergraphs: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            emit_snapshots: true,
            emit_hypergraphs: false,
        }
    }
}

impl AppConfig {
    /// Load from a JSON file. A run manifest (object with a `schema` of
    /// "hyperflow-run-v1" and a `config` key) is accepted too, so any run can
    /// be reproduced straight from its manifest.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Io(format!("reading {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let config_value = match value.get("schema").and_then(|s| s.as_str()) {
            Some(schema) if schema.starts_with("hyperflow-") => value
                .get("config")
                .cloned()
                .ok_or_else(|| {
                    AppError::Config(format!("{}: manifest lacks a config section", path.display()))
                })?,
            _ => value,
        };
        let config: AppConfig = serde_json::from_value(config_value)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Field-by-field validation with the offending field named.
    pub fn validate(&self) -> Result<(), AppError> {
        let named = |field: &str, message: String| AppError::Config(format!("{field}: {message}"));
        if self.mesh.n_div == 0 {
            return Err(named("mesh.n_div", "must be at least 1".into()));
        }
        let check_beta = |field: &str, beta: f64| {
            if beta > 1.0 && beta < 2.0 {
                Ok(())
            } else {
                Err(named(
                    field,
                    format!("must lie in the open interval (1, 2), got {beta}"),
                ))
            }
        };
        check_beta("solver.beta", self.solver.beta)?;
        for (k, &beta) in self.ensemble.betas.iter().enumerate() {
            check_beta(&format!("ensemble.betas[{k}]"), beta)?;
        }
        for (field, value) in [
            ("solver.tau", self.solver.tau),
            ("solver.mu_floor", self.solver.mu_floor),
            ("solver.linear_tol", self.solver.linear_tol),
        ] {
            if !(value > 0.0) {
                return Err(named(field, format!("must be positive, got {value}")));
            }
        }
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0) {
                return Err(named("solver.dt", format!("must be positive, got {dt}")));
            }
        }
        if !(self.extraction.threshold_ratio > 0.0 && self.extraction.threshold_ratio < 1.0) {
            return Err(named(
                "extraction.threshold_ratio",
                format!(
                    "must lie in the open interval (0, 1), got {}",
                    self.extraction.threshold_ratio
                ),
            ));
        }
        if !(self.analysis.p >= 1.0) {
            return Err(named(
                "analysis.p",
                format!("must be at least 1, got {}", self.analysis.p),
            ));
        }
        if self.analysis.s_values.is_empty() {
            return Err(named("analysis.s_values", "must not be empty".into()));
        }
        if self.analysis.s_values.iter().any(|&s| s == 0) {
            return Err(named("analysis.s_values", "entries must be at least 1".into()));
        }
        if self.ensemble.n_problems == 0 {
            return Err(named("ensemble.n_problems", "must be at least 1".into()));
        }
        if self.ensemble.betas.is_empty() {
            return Err(named("ensemble.betas", "must not be empty".into()));
        }
        if self.image.downsample == 0 {
            return Err(named("image.downsample", "must be at least 1".into()));
        }
        if self.problem.n_sinks == 0 {
            return Err(named("problem.n_sinks", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            s_values: self.analysis.s_values.clone(),
            threshold_ratio: self.extraction.threshold_ratio,
            p: self.analysis.p,
        }
    }
}
