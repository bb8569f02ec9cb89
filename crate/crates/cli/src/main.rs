//! `hyperflow`: solve branched transport problems, extract temporal
//! hypergraphs, and analyze their property evolution.

use clap::{Args, Parser, Subcommand};
use hyperflow_cli::commands::{self, default_parallelism, resolve_out_dir};
use hyperflow_cli::{AppConfig, AppError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hyperflow",
    about = "Branched optimal transport solved as dynamics on a triangulated unit square, \
             with temporal hypergraph extraction and analytics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides mirroring the config file fields; flags win over the file.
#[derive(Args, Default)]
struct Overrides {
    /// Mesh resolution (cells per side of the unit square)
    #[arg(long)]
    n_div: Option<usize>,
    /// Traffic rate in (1, 2)
    #[arg(long)]
    beta: Option<f64>,
    /// Forward-Euler time step (default: beta-scaled)
    #[arg(long)]
    dt: Option<f64>,
    /// Iteration cap for the dynamics
    #[arg(long)]
    max_iter: Option<usize>,
    /// Convergence tolerance on the max-norm conductivity update
    #[arg(long)]
    tau: Option<f64>,
    /// Lower clamp preserving conductivity positivity
    #[arg(long)]
    mu_floor: Option<f64>,
    /// Relative residual tolerance of the elliptic solve
    #[arg(long)]
    linear_tol: Option<f64>,
    /// Activation cutoff as a fraction of the conductivity maximum
    #[arg(long)]
    threshold_ratio: Option<f64>,
    /// s values for s-degree/s-closeness traces, comma separated
    #[arg(long, value_delimiter = ',')]
    s_values: Option<Vec<usize>>,
    /// Convergence band fraction (t_L/t_P are first entries into p x final)
    #[arg(long)]
    p: Option<f64>,
    /// Problem seed (sink layout)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sinks
    #[arg(long)]
    n_sinks: Option<usize>,
    /// Support circle radius (default: 1.5 mesh cells)
    #[arg(long)]
    radius: Option<f64>,
    /// Divisions of the sink sampling grid (default: n_div)
    #[arg(long)]
    sample_grid_divisions: Option<usize>,
    /// Master seed of the ensemble
    #[arg(long)]
    master_seed: Option<u64>,
    /// Number of source-sink configurations in the ensemble
    #[arg(long)]
    n_problems: Option<usize>,
    /// Ensemble traffic rates, comma separated
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Intensity threshold for image node blocks
    #[arg(long)]
    intensity_threshold: Option<f64>,
    /// Node grid spacing in pixels
    #[arg(long)]
    downsample: Option<usize>,
    /// Moving-average width for consolidation detection
    #[arg(long)]
    moving_average_window: Option<usize>,
    /// Continue past undecodable frames, reporting them
    #[arg(long)]
    permissive: bool,
    /// Write per-step hypergraph JSONs
    #[arg(long)]
    emit_hypergraphs: bool,
    /// Skip per-step conductivity snapshots
    #[arg(long)]
    no_snapshots: bool,
}

impl Overrides {
    fn apply(&self, config: &mut AppConfig) {
        if let Some(v) = self.n_div {
            config.mesh.n_div = v;
        }
        if let Some(v) = self.beta {
            config.solver.beta = v;
        }
        if self.dt.is_some() {
            config.solver.dt = self.dt;
        }
        if let Some(v) = self.max_iter {
            config.solver.max_iter = v;
        }
        if let Some(v) = self.tau {
            config.solver.tau = v;
        }
        if let Some(v) = self.mu_floor {
            config.solver.mu_floor = v;
        }
        if let Some(v) = self.linear_tol {
            config.solver.linear_tol = v;
        }
        if let Some(v) = self.threshold_ratio {
            config.extraction.threshold_ratio = v;
        }
        if let Some(v) = &self.s_values {
            config.analysis.s_values = v.clone();
            config.image.s_values = v.clone();
        }
        if let Some(v) = self.p {
            config.analysis.p = v;
        }
        if let Some(v) = self.seed {
            config.problem.seed = v;
        }
        if let Some(v) = self.n_sinks {
            config.problem.n_sinks = v;
            config.ensemble.n_sinks = v;
        }
        if self.radius.is_some() {
            config.problem.radius = self.radius;
            config.ensemble.radius = self.radius;
        }
        if self.sample_grid_divisions.is_some() {
            config.problem.sample_grid_divisions = self.sample_grid_divisions;
            config.ensemble.sample_grid_divisions = self.sample_grid_divisions;
        }
        if let Some(v) = self.master_seed {
            config.ensemble.master_seed = v;
        }
        if let Some(v) = self.n_problems {
            config.ensemble.n_problems = v;
        }
        if let Some(v) = &self.betas {
            config.ensemble.betas = v.clone();
        }
        if let Some(v) = self.intensity_threshold {
            config.image.intensity_threshold = v;
        }
        if let Some(v) = self.downsample {
            config.image.downsample = v;
        }
        if let Some(v) = self.moving_average_window {
            config.image.moving_average_window = v;
        }
        if self.permissive {
            config.image.permissive = true;
        }
        if self.emit_hypergraphs {
            config.output.emit_hypergraphs = true;
        }
        if self.no_snapshots {
            config.output.emit_snapshots = false;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one transport problem and write manifest, snapshots, traces
    /// and the convergence report
    Solve {
        /// Config JSON (or a run manifest to reproduce)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run an ensemble of problems x betas and aggregate the traces
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of jobs to run concurrently (default: available cores)
        #[arg(long)]
        parallelism: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Analyze a PGM image sequence as a temporal hypergraph
    Image {
        /// Image sequence manifest JSON ({"frames": [...]})
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-run analytics on the stored snapshots of a previous run
    Props {
        /// Run directory containing manifest.json and steps/
        #[arg(long)]
        run: PathBuf,
        /// Output directory (default: the run directory)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate and emit a problem layout only
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &Overrides) -> Result<AppConfig, AppError> {
    let mut config = match path {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Solve {
            config,
            out,
            overrides,
        } => {
            let config = load_config(config.as_ref(), &overrides)?;
            let out = resolve_out_dir(&out)?;
            let outcome = commands::run_solve(&config, &out)?;
            eprintln!(
                "solve {}: {} steps, converged={}, t_cost={}, t_covered_area={}",
                outcome.run_id, outcome.steps, outcome.converged, outcome.t_cost,
                outcome.t_covered_area
            );
            Ok(())
        }
        Command::Batch {
            config,
            out,
            parallelism,
            overrides,
        } => {
            let config = load_config(config.as_ref(), &overrides)?;
            let out = resolve_out_dir(&out)?;
            let parallelism = parallelism.unwrap_or_else(default_parallelism);
            let outcome = commands::run_batch(&config, &out, parallelism)?;
            eprintln!(
                "batch: {} jobs, {} failed",
                outcome.jobs_total, outcome.jobs_failed
            );
            if outcome.jobs_failed > 0 {
                return Err(AppError::Solver(format!(
                    "{} of {} jobs failed; see batch_manifest.json",
                    outcome.jobs_failed, outcome.jobs_total
                )));
            }
            Ok(())
        }
        Command::Image {
            manifest,
            config,
            out,
            overrides,
        } => {
            let config = load_config(config.as_ref(), &overrides)?;
            let out = resolve_out_dir(&out)?;
            let outcome = commands::run_image(&manifest, &config, &out)?;
            eprintln!(
                "image: {} frames analyzed, {} failed, consolidation={:?}",
                outcome.frames_analyzed, outcome.frames_failed, outcome.consolidation
            );
            Ok(())
        }
        Command::Props {
            run: run_dir,
            out,
            overrides,
        } => {
            // overrides apply on top of the stored manifest config
            let manifest_config = AppConfig::load(&run_dir.join("manifest.json"))?;
            let mut config = manifest_config;
            overrides.apply(&mut config);
            config.validate()?;
            let out = resolve_out_dir(out.as_deref().unwrap_or(&run_dir))?;
            let outcome = commands::run_props(&run_dir, &out, Some(&config))?;
            eprintln!(
                "props {}: t_cost={}, t_covered_area={}",
                outcome.run_id, outcome.t_cost, outcome.t_covered_area
            );
            Ok(())
        }
        Command::Gen {
            config,
            out,
            overrides,
        } => {
            let config = load_config(config.as_ref(), &overrides)?;
            let spec = commands::run_gen(&config, out.as_deref())?;
            eprintln!(
                "gen: seed {} with {} sinks at radius {}",
                spec.seed,
                spec.sink_centers.len(),
                spec.radius
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
