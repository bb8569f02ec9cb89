//! Synthetic problem generation: one source at the origin, sinks sampled
//! without replacement from a regular grid, circular supports, and forcing
//! normalized so both sides are probability distributions.

use crate::dmk::{DmkError, ForcingField, TransportProblem};
use crate::mesh::Mesh;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("requested {requested} sinks but the sampling grid offers only {available} nodes")]
    NotEnoughGridNodes { requested: usize, available: usize },
    #[error("circle at ({x}, {y}) with radius {radius} captures no mesh vertices")]
    EmptyCircle { x: f64, y: f64, radius: f64 },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("sample grid needs at least one division")]
    ZeroGridDivisions,
    #[error(transparent)]
    Forcing(#[from] DmkError),
}

/// Geometry of one synthetic problem: fixed source, sampled sinks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub source_center: [f64; 2],
    pub sink_centers: Vec<[f64; 2]>,
    pub radius: f64,
    pub seed: u64,
    pub n_sinks: usize,
}

/// Generation parameters for one problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemParams {
    pub seed: u64,
    pub sample_grid_divisions: usize,
    pub n_sinks: usize,
    pub radius: f64,
}

impl ProblemParams {
    /// Full-scale defaults on a given mesh resolution: 15 sinks, sampling
    /// grid aligned with the mesh, radius 1.5·h so every circle captures at
    /// least one vertex.
    pub fn for_mesh_divisions(n_div: usize, seed: u64) -> Self {
        Self {
            seed,
            sample_grid_divisions: n_div,
            n_sinks: 15,
            radius: 1.5 / n_div as f64,
        }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Sample the sink layout: grid nodes further than 2r from the source,
/// drawn without replacement with a seeded generator.
pub fn generate_spec(params: &ProblemParams) -> Result<ProblemSpec, SynthError> {
    if params.radius <= 0.0 {
        return Err(SynthError::NonPositiveRadius(params.radius));
    }
    if params.sample_grid_divisions == 0 {
        return Err(SynthError::ZeroGridDivisions);
    }
    let source = [0.0, 0.0];
    let g = params.sample_grid_divisions;
    let spacing = 1.0 / g as f64;
    let mut candidates = Vec::new();
    for j in 0..=g {
        for i in 0..=g {
            let p = [i as f64 * spacing, j as f64 * spacing];
            if distance(p, source) > 2.0 * params.radius {
                candidates.push(p);
            }
        }
    }
    if candidates.len() < params.n_sinks {
        return Err(SynthError::NotEnoughGridNodes {
            requested: params.n_sinks,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let sink_centers: Vec<[f64; 2]> = candidates
        .choose_multiple(&mut rng, params.n_sinks)
        .copied()
        .collect();
    Ok(ProblemSpec {
        source_center: source,
        sink_centers,
        radius: params.radius,
        seed: params.seed,
        n_sinks: params.n_sinks,
    })
}

/// Indicator forcing over circle supports, each side normalized to unit
/// lumped mass: Σ f⁺·w = Σ f⁻·w = 1.
pub fn build_forcing(mesh: &Mesh, spec: &ProblemSpec) -> Result<ForcingField, SynthError> {
    let n = mesh.n_vertices();
    let weights = mesh.vertex_areas();

    let capture = |center: [f64; 2]| -> Vec<usize> {
        (0..n)
            .filter(|&v| distance(mesh.vertices()[v], center) <= spec.radius)
            .collect()
    };

    let source_vertices = capture(spec.source_center);
    if source_vertices.is_empty() {
        return Err(SynthError::EmptyCircle {
            x: spec.source_center[0],
            y: spec.source_center[1],
            radius: spec.radius,
        });
    }
    let mut plus = vec![0.0; n];
    for &v in &source_vertices {
        plus[v] = 1.0;
    }

    let mut minus = vec![0.0; n];
    for center in &spec.sink_centers {
        let captured = capture(*center);
        if captured.is_empty() {
            return Err(SynthError::EmptyCircle {
                x: center[0],
                y: center[1],
                radius: spec.radius,
            });
        }
        for v in captured {
            minus[v] += 1.0;
        }
    }

    let plus_mass: f64 = plus.iter().zip(weights).map(|(f, w)| f * w).sum();
    let minus_mass: f64 = minus.iter().zip(weights).map(|(f, w)| f * w).sum();
    let values: Vec<f64> = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| p / plus_mass - m / minus_mass)
        .collect();

    let source_support: Vec<usize> = source_vertices;
    let sink_support: Vec<usize> = (0..n).filter(|&v| minus[v] > 0.0).collect();
    Ok(ForcingField::new(
        mesh,
        values,
        source_support,
        sink_support,
    )?)
}

/// Generate the problem layout and its forcing on a mesh in one call.
pub fn generate_problem<'m>(
    mesh: &'m Mesh,
    params: &ProblemParams,
) -> Result<(ProblemSpec, TransportProblem<'m>), SynthError> {
    let spec = generate_spec(params)?;
    let forcing = build_forcing(mesh, &spec)?;
    Ok((spec, TransportProblem { mesh, forcing }))
}

/// One batch entry: a problem layout paired with a traffic rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobSpec {
    pub problem_index: usize,
    pub beta: f64,
    /// Seed for the problem layout, derived from the master seed; shared
    /// across the betas of the same problem.
    pub problem_seed: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer; the standard avalanche mix.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-problem seed from the master seed.
pub fn derive_seed(master_seed: u64, problem_index: usize) -> u64 {
    splitmix64(master_seed ^ (problem_index as u64).wrapping_mul(GOLDEN_GAMMA))
}

/// Cartesian product problems × betas with derived per-problem seeds.
pub fn generate_ensemble(n_problems: usize, betas: &[f64], master_seed: u64) -> Vec<JobSpec> {
    let mut jobs = Vec::with_capacity(n_problems * betas.len());
    for problem_index in 0..n_problems {
        let problem_seed = derive_seed(master_seed, problem_index);
        for &beta in betas {
            jobs.push(JobSpec {
                problem_index,
                beta,
                problem_seed,
            });
        }
    }
    jobs
}
