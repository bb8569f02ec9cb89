//! Run and batch manifests: enough to reproduce every artifact byte for
//! byte from the manifest alone.

use crate::config::AppConfig;
use hyperflow_core::synth::ProblemSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const RUN_SCHEMA: &str = "hyperflow-run-v1";
pub const BATCH_SCHEMA: &str = "hyperflow-batch-v1";
pub const IMAGE_SCHEMA: &str = "hyperflow-image-v1";

/// FNV-1a 64-bit content hash, hex-encoded; recorded per artifact so
/// reproduced outputs can be checked without external tooling.
pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    /// Full resolved configuration; feeding this manifest back to `solve`
    /// reproduces the run.
    pub config: AppConfig,
    pub problem: ProblemSpec,
    pub problem_hash: String,
    pub converged: bool,
    /// Number of stored states, initial state included.
    pub steps: usize,
    /// Per-step (t, total, energy, structure) cost rows.
    pub cost_rows: Vec<(usize, f64, f64, f64)>,
    /// Relative artifact path -> content hash.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub problem_index: usize,
    pub beta: f64,
    pub problem_seed: u64,
    /// "ok" or the failure message.
    pub status: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchManifest {
    pub schema: String,
    pub config: AppConfig,
    pub master_seed: u64,
    pub parallelism_independent: bool,
    pub jobs: Vec<JobRecord>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRunManifest {
    pub schema: String,
    pub config: AppConfig,
    pub frames: Vec<String>,
    /// (frame index, error message) for frames skipped in permissive mode.
    pub frame_errors: Vec<(usize, String)>,
    /// Inclusive frame range of the consolidation phase, when detected.
    pub consolidation: Option<(usize, usize)>,
    pub artifacts: BTreeMap<String, String>,
}
