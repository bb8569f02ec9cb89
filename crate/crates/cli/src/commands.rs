//! Command implementations behind the CLI surface, callable in-process.

use crate::config::AppConfig;
use crate::error::AppError;
use crate::manifest::{
    fnv1a64_hex, BatchManifest, ImageRunManifest, JobRecord, RunManifest, BATCH_SCHEMA,
    IMAGE_SCHEMA, RUN_SCHEMA,
};
use hyperflow_core::dmk::{run_dmk, ConductivityField, DmkRun};
use hyperflow_core::extract::{graph_from_field, hypergraph_from_graph};
use hyperflow_core::image::{analyze_image_sequence, ImageSequenceManifest};
use hyperflow_core::mesh::{triangulate_unit_square, Mesh};
use hyperflow_core::synth::{generate_ensemble, generate_problem, generate_spec, ProblemSpec};
use hyperflow_core::temporal::{
    aggregate, analyze_steps, write_aggregate_csv, write_trace_csv, AggregateTrace, RunAnalysis,
    StepView,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct SolveOutcome {
    pub run_id: String,
    pub converged: bool,
    pub steps: usize,
    pub t_cost: usize,
    pub t_covered_area: usize,
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub jobs_total: usize,
    pub jobs_failed: usize,
}

#[derive(Debug)]
pub struct ImageOutcome {
    pub frames_analyzed: usize,
    pub frames_failed: usize,
    pub consolidation: Option<(usize, usize)>,
}

fn write_artifact(
    out_dir: &Path,
    relative: &str,
    bytes: &[u8],
    hashes: &mut BTreeMap<String, String>,
) -> Result<(), AppError> {
    let path = out_dir.join(relative);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::Io(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(&path, bytes).map_err(|e| AppError::Io(format!("writing {}: {e}", path.display())))?;
    hashes.insert(relative.to_string(), fnv1a64_hex(bytes));
    Ok(())
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

fn run_id_for(seed: u64, beta: f64) -> String {
    format!("seed{seed}_beta{beta}")
}

/// Snapshot filename for one time index.
fn snapshot_name(t: usize) -> String {
    format!("steps/mu_{t:05}.json")
}

fn hypergraph_name(t: usize) -> String {
    format!("hypergraphs/h_{t:05}.json")
}

struct SolvedJob {
    spec: ProblemSpec,
    run: DmkRun,
    analysis: RunAnalysis,
}

fn solve_and_analyze(config: &AppConfig, mesh: &Mesh) -> Result<SolvedJob, AppError> {
    let params = config.problem.to_params(config.mesh.n_div);
    let (spec, problem) = generate_problem(mesh, &params)?;
    let solver_config = config.solver.to_solver_config(config.solver.beta);
    let run = run_dmk(&problem, &solver_config)?;
    let analysis = analyze_steps(
        mesh,
        &run.steps
            .iter()
            .map(|s| StepView {
                mu: &s.mu,
                cost: s.cost,
            })
            .collect::<Vec<_>>(),
        solver_config.beta,
        &config.analysis_config(),
    )?;
    Ok(SolvedJob {
        spec,
        run,
        analysis,
    })
}

/// Write the artifacts of a solved run into `out_dir` and return its manifest.
fn write_run_artifacts(
    config: &AppConfig,
    mesh: &Mesh,
    job: &SolvedJob,
    out_dir: &Path,
) -> Result<RunManifest, AppError> {
    let run_id = run_id_for(job.spec.seed, config.solver.beta);
    let mut artifacts = BTreeMap::new();

    write_artifact(out_dir, "problem.json", &pretty_json(&job.spec), &mut artifacts)?;

    let mut trace_csv = Vec::new();
    write_trace_csv(&mut trace_csv, &run_id, &job.analysis.traces)
        .map_err(|e| AppError::Io(e.to_string()))?;
    write_artifact(out_dir, "traces.csv", &trace_csv, &mut artifacts)?;

    write_artifact(
        out_dir,
        "convergence.json",
        &pretty_json(&job.analysis.report),
        &mut artifacts,
    )?;

    if config.output.emit_snapshots {
        for step in &job.run.steps {
            write_artifact(
                out_dir,
                &snapshot_name(step.mu.time_index()),
                &pretty_json(&step.mu),
                &mut artifacts,
            )?;
        }
    }
    if config.output.emit_hypergraphs {
        for step in &job.run.steps {
            let graph = graph_from_field(mesh, &step.mu, config.extraction.threshold_ratio)
                .map_err(|e| AppError::Solver(e.to_string()))?;
            let h = hypergraph_from_graph(&graph);
            write_artifact(
                out_dir,
                &hypergraph_name(step.mu.time_index()),
                h.to_json().as_bytes(),
                &mut artifacts,
            )?;
        }
    }

    let cost_rows = job
        .run
        .steps
        .iter()
        .map(|s| (s.mu.time_index(), s.cost.total, s.cost.energy, s.cost.structure))
        .collect();
    let manifest = RunManifest {
        schema: RUN_SCHEMA.to_string(),
        run_id,
        config: config.clone(),
        problem: job.spec.clone(),
        problem_hash: fnv1a64_hex(serde_json::to_string(&job.spec).unwrap().as_bytes()),
        converged: job.run.converged,
        steps: job.run.steps.len(),
        cost_rows,
        artifacts,
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, pretty_json(&manifest))
        .map_err(|e| AppError::Io(format!("writing {}: {e}", manifest_path.display())))?;
    Ok(manifest)
}

/// Solve one problem and write the full artifact set.
pub fn run_solve(config: &AppConfig, out_dir: &Path) -> Result<SolveOutcome, AppError> {
    config.validate()?;
    let mesh = triangulate_unit_square(config.mesh.n_div)?;
    let job = solve_and_analyze(config, &mesh)?;
    let manifest = write_run_artifacts(config, &mesh, &job, out_dir)?;
    Ok(SolveOutcome {
        run_id: manifest.run_id,
        converged: job.run.converged,
        steps: job.run.steps.len(),
        t_cost: job.analysis.report.t_cost,
        t_covered_area: job.analysis.report.t_property["covered_area"],
    })
}

/// Run the full ensemble, then aggregate. Failed jobs are recorded and the
/// batch continues; the outcome reports how many failed.
pub fn run_batch(
    config: &AppConfig,
    out_dir: &Path,
    parallelism: usize,
) -> Result<BatchOutcome, AppError> {
    config.validate()?;
    let mesh = triangulate_unit_square(config.mesh.n_div)?;
    let jobs = generate_ensemble(
        config.ensemble.n_problems,
        &config.ensemble.betas,
        config.ensemble.master_seed,
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| AppError::Io(format!("building thread pool: {e}")))?;

    struct JobResult {
        record: JobRecord,
        analysis: Option<RunAnalysis>,
        report: Option<(usize, usize, bool, usize)>, // t_cost, t_S, converged, steps
    }

    let results: Vec<JobResult> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(idx, job)| {
                let job_id = format!("job{idx:03}_p{:02}_beta{}", job.problem_index, job.beta);
                let mut job_config = config.clone();
                job_config.solver.beta = job.beta;
                job_config.problem.seed = job.problem_seed;
                job_config.problem.n_sinks = config.ensemble.n_sinks;
                job_config.problem.sample_grid_divisions = config.ensemble.sample_grid_divisions;
                job_config.problem.radius = config.ensemble.radius;

                let job_dir = out_dir.join("jobs").join(&job_id);
                let outcome = solve_and_analyze(&job_config, &mesh).and_then(|solved| {
                    write_run_artifacts(&job_config, &mesh, &solved, &job_dir)?;
                    Ok(solved)
                });
                match outcome {
                    Ok(solved) => JobResult {
                        record: JobRecord {
                            job_id,
                            problem_index: job.problem_index,
                            beta: job.beta,
                            problem_seed: job.problem_seed,
                            status: "ok".into(),
                        },
                        report: Some((
                            solved.analysis.report.t_cost,
                            solved.analysis.report.t_property["covered_area"],
                            solved.run.converged,
                            solved.run.steps.len(),
                        )),
                        analysis: Some(solved.analysis),
                    },
                    Err(e) => JobResult {
                        record: JobRecord {
                            job_id,
                            problem_index: job.problem_index,
                            beta: job.beta,
                            problem_seed: job.problem_seed,
                            status: format!("failed: {e}"),
                        },
                        analysis: None,
                        report: None,
                    },
                }
            })
            .collect()
    });

    let mut artifacts = BTreeMap::new();

    // aggregate per (beta, property) over successful jobs, in beta order
    let mut betas_sorted = config.ensemble.betas.clone();
    betas_sorted.sort_by(|a, b| a.total_cmp(b));
    let mut aggregates: Vec<AggregateTrace> = Vec::new();
    for &beta in &betas_sorted {
        let analyses: Vec<&RunAnalysis> = results
            .iter()
            .filter(|r| r.record.beta == beta)
            .filter_map(|r| r.analysis.as_ref())
            .collect();
        if analyses.is_empty() {
            continue;
        }
        let keys: Vec<String> = analyses[0].traces.iter().map(|t| t.key()).collect();
        for key in keys {
            let group: Vec<_> = analyses
                .iter()
                .filter_map(|a| a.traces.iter().find(|t| t.key() == key))
                .collect();
            aggregates.push(aggregate(&group)?);
        }
    }
    let mut agg_csv = Vec::new();
    write_aggregate_csv(&mut agg_csv, &aggregates).map_err(|e| AppError::Io(e.to_string()))?;
    write_artifact(out_dir, "aggregate.csv", &agg_csv, &mut artifacts)?;

    // per-job summary of the two convergence markers
    let mut summary = String::from("job_id,problem_index,beta,problem_seed,status,steps,converged,t_cost,t_covered_area\n");
    for r in &results {
        match r.report {
            Some((t_cost, t_area, converged, steps)) => {
                summary.push_str(&format!(
                    "{},{},{},{},ok,{},{},{},{}\n",
                    r.record.job_id,
                    r.record.problem_index,
                    r.record.beta,
                    r.record.problem_seed,
                    steps,
                    converged,
                    t_cost,
                    t_area
                ));
            }
            None => {
                summary.push_str(&format!(
                    "{},{},{},{},failed,,,,\n",
                    r.record.job_id, r.record.problem_index, r.record.beta, r.record.problem_seed
                ));
            }
        }
    }
    write_artifact(out_dir, "summary.csv", summary.as_bytes(), &mut artifacts)?;

    let jobs_failed = results.iter().filter(|r| r.analysis.is_none()).count();
    let manifest = BatchManifest {
        schema: BATCH_SCHEMA.to_string(),
        config: config.clone(),
        master_seed: config.ensemble.master_seed,
        parallelism_independent: true,
        jobs: results.into_iter().map(|r| r.record).collect(),
        artifacts,
    };
    fs::write(out_dir.join("batch_manifest.json"), pretty_json(&manifest))
        .map_err(|e| AppError::Io(format!("writing batch manifest: {e}")))?;

    Ok(BatchOutcome {
        jobs_total: jobs.len(),
        jobs_failed,
    })
}

/// Analyze a PGM image sequence listed in a JSON manifest; frame paths are
/// resolved relative to the manifest file.
pub fn run_image(
    manifest_path: &Path,
    config: &AppConfig,
    out_dir: &Path,
) -> Result<ImageOutcome, AppError> {
    config.validate()?;
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| AppError::Io(format!("reading {}: {e}", manifest_path.display())))?;
    let mut sequence: ImageSequenceManifest = serde_json::from_str(&text)
        .map_err(|e| AppError::Config(format!("{}: {e}", manifest_path.display())))?;
    if sequence.frames.is_empty() {
        return Err(AppError::Config(format!(
            "{}: manifest lists no frames",
            manifest_path.display()
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    sequence.frames = sequence
        .frames
        .iter()
        .map(|f| if f.is_absolute() { f.clone() } else { base.join(f) })
        .collect();

    let image_config = config.image.to_image_config();
    let analysis = analyze_image_sequence(&sequence, &image_config)?;

    let mut artifacts = BTreeMap::new();
    let mut trace_csv = Vec::new();
    write_trace_csv(&mut trace_csv, "image", &analysis.traces)
        .map_err(|e| AppError::Io(e.to_string()))?;
    write_artifact(out_dir, "traces.csv", &trace_csv, &mut artifacts)?;

    for (frame, h) in &analysis.hypergraphs {
        write_artifact(
            out_dir,
            &format!("hypergraphs/frame_{frame:05}.json"),
            h.to_json().as_bytes(),
            &mut artifacts,
        )?;
    }

    #[derive(serde::Serialize)]
    struct ConsolidationReport {
        window: Option<(usize, usize)>,
        moving_average_window: usize,
    }
    write_artifact(
        out_dir,
        "consolidation.json",
        &pretty_json(&ConsolidationReport {
            window: analysis.consolidation,
            moving_average_window: image_config.moving_average_window,
        }),
        &mut artifacts,
    )?;

    let manifest = ImageRunManifest {
        schema: IMAGE_SCHEMA.to_string(),
        config: config.clone(),
        frames: sequence
            .frames
            .iter()
            .map(|f| f.display().to_string())
            .collect(),
        frame_errors: analysis
            .frame_errors
            .iter()
            .map(|(i, e)| (*i, e.to_string()))
            .collect(),
        consolidation: analysis.consolidation,
        artifacts,
    };
    fs::write(out_dir.join("manifest.json"), pretty_json(&manifest))
        .map_err(|e| AppError::Io(format!("writing image manifest: {e}")))?;

    Ok(ImageOutcome {
        frames_analyzed: analysis.hypergraphs.len(),
        frames_failed: analysis.frame_errors.len(),
        consolidation: analysis.consolidation,
    })
}

/// Re-run the analytics of a stored run from its snapshots, writing a fresh
/// traces.csv and convergence.json (and hypergraphs when configured).
pub fn run_props(
    run_dir: &Path,
    out_dir: &Path,
    override_config: Option<&AppConfig>,
) -> Result<SolveOutcome, AppError> {
    let manifest_text = fs::read_to_string(run_dir.join("manifest.json"))
        .map_err(|e| AppError::Io(format!("reading run manifest: {e}")))?;
    let manifest: RunManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| AppError::Data(format!("run manifest: {e}")))?;
    let config = override_config.unwrap_or(&manifest.config);
    config.validate()?;
    let mesh = triangulate_unit_square(config.mesh.n_div)?;

    let mut snapshots: Vec<ConductivityField> = Vec::with_capacity(manifest.steps);
    for t in 0..manifest.steps {
        let path = run_dir.join(snapshot_name(t));
        let text = fs::read_to_string(&path).map_err(|e| {
            AppError::Data(format!(
                "snapshot {} missing or unreadable: {e}",
                path.display()
            ))
        })?;
        let mu: ConductivityField = serde_json::from_str(&text)
            .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        snapshots.push(mu);
    }
    if snapshots.len() != manifest.cost_rows.len() {
        return Err(AppError::Data(format!(
            "manifest lists {} cost rows but {} snapshots found",
            manifest.cost_rows.len(),
            snapshots.len()
        )));
    }

    let views: Vec<StepView> = snapshots
        .iter()
        .zip(&manifest.cost_rows)
        .map(|(mu, &(_, total, energy, structure))| StepView {
            mu,
            cost: hyperflow_core::dmk::CostBreakdown {
                total,
                energy,
                structure,
            },
        })
        .collect();
    let analysis = analyze_steps(&mesh, &views, config.solver.beta, &config.analysis_config())?;

    let mut artifacts = BTreeMap::new();
    let mut trace_csv = Vec::new();
    write_trace_csv(&mut trace_csv, &manifest.run_id, &analysis.traces)
        .map_err(|e| AppError::Io(e.to_string()))?;
    write_artifact(out_dir, "traces.csv", &trace_csv, &mut artifacts)?;
    write_artifact(
        out_dir,
        "convergence.json",
        &pretty_json(&analysis.report),
        &mut artifacts,
    )?;
    if config.output.emit_hypergraphs {
        for mu in &snapshots {
            let graph = graph_from_field(&mesh, mu, config.extraction.threshold_ratio)
                .map_err(|e| AppError::Solver(e.to_string()))?;
            let h = hypergraph_from_graph(&graph);
            write_artifact(
                out_dir,
                &hypergraph_name(mu.time_index()),
                h.to_json().as_bytes(),
                &mut artifacts,
            )?;
        }
    }

    Ok(SolveOutcome {
        run_id: manifest.run_id,
        converged: manifest.converged,
        steps: manifest.steps,
        t_cost: analysis.report.t_cost,
        t_covered_area: analysis.report.t_property["covered_area"],
    })
}

/// Emit the problem layout only.
pub fn run_gen(config: &AppConfig, out_path: Option<&Path>) -> Result<ProblemSpec, AppError> {
    config.validate()?;
    let params = config.problem.to_params(config.mesh.n_div);
    let spec = generate_spec(&params)?;
    // fail here, not at solve time, if the layout cannot capture vertices
    let mesh = triangulate_unit_square(config.mesh.n_div)?;
    hyperflow_core::synth::build_forcing(&mesh, &spec)?;
    let json = pretty_json(&spec);
    match out_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, &json)
                .map_err(|e| AppError::Io(format!("writing {}: {e}", path.display())))?;
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&json)?;
        }
    }
    Ok(spec)
}

/// Default parallelism: the number of available execution units.
pub fn default_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn resolve_out_dir(out: &Path) -> Result<PathBuf, AppError> {
    fs::create_dir_all(out)
        .map_err(|e| AppError::Io(format!("creating {}: {e}", out.display())))?;
    Ok(out.to_path_buf())
}
