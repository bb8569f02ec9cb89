//! Run-level behavior of the dynamics: cost descent, convergence-time
//! orderings, fixed-point consistency, and determinism of whole runs.

use hyperflow_core::dmk::{
    compute_flux_magnitude, run_dmk, ConductivityField, ForcingField, SolverConfig,
    TransportProblem,
};
use hyperflow_core::mesh::triangulate_unit_square;
use hyperflow_core::synth::{generate_problem, ProblemParams};
use hyperflow_core::temporal::{analyze_run, AnalysisConfig};

const N_DIV: usize = 16;
const SEED: u64 = 20_240_811;

fn problem_on(mesh: &hyperflow_core::mesh::Mesh, seed: u64) -> TransportProblem<'_> {
    let params = ProblemParams {
        seed,
        ..ProblemParams::for_mesh_divisions(N_DIV, seed)
    };
    let (_, problem) = generate_problem(mesh, &params).unwrap();
    problem
}

#[test]
fn lyapunov_cost_descends_after_first_step() {
    // single source, single sink
    let mesh = triangulate_unit_square(N_DIV).unwrap();
    let params = ProblemParams {
        seed: SEED,
        n_sinks: 1,
        ..ProblemParams::for_mesh_divisions(N_DIV, SEED)
    };
    let (_, problem) = generate_problem(&mesh, &params).unwrap();
    let run = run_dmk(&problem, &SolverConfig::for_beta(1.5)).unwrap();
    assert!(run.steps.len() > 50);
    for (t, pair) in run.steps.windows(2).enumerate().skip(1) {
        let (before, after) = (pair[0].cost, pair[1].cost);
        assert!(
            after.total <= before.total * (1.0 + 1e-8),
            "cost rose at step {}: {} -> {}",
            t + 1,
            before.total,
            after.total
        );
        assert!(after.energy >= 0.0 && after.structure >= 0.0);
    }
}

#[test]
fn property_convergence_lags_cost_convergence() {
    let mesh = triangulate_unit_square(N_DIV).unwrap();
    let problem = problem_on(&mesh, SEED);
    let config = SolverConfig::for_beta(1.5);
    let run = run_dmk(&problem, &config).unwrap();
    let analysis = analyze_run(&mesh, &run, config.beta, &AnalysisConfig::default()).unwrap();
    let t_cost = analysis.report.t_cost;
    let t_area = analysis.report.t_property["covered_area"];
    assert!(
        t_area > t_cost,
        "expected covered-area convergence after cost convergence, got t_S={t_area} t_L={t_cost}"
    );
}

#[test]
fn cost_convergence_time_increases_with_beta() {
    let mesh = triangulate_unit_square(N_DIV).unwrap();
    let problem = problem_on(&mesh, SEED);
    let mut t_costs = Vec::new();
    for beta in [1.2, 1.5, 1.8] {
        let config = SolverConfig::for_beta(beta);
        let run = run_dmk(&problem, &config).unwrap();
        let analysis = analyze_run(&mesh, &run, beta, &AnalysisConfig::default()).unwrap();
        t_costs.push(analysis.report.t_cost);
    }
    assert!(
        t_costs[0] <= t_costs[1] && t_costs[1] <= t_costs[2],
        "t_L not monotone in beta: {t_costs:?}"
    );
}

#[test]
fn convergence_takes_at_least_as_long_at_high_traffic_rate() {
    let mesh = triangulate_unit_square(8).unwrap();
    let problem = problem_on2(&mesh, 7);
    let slow = run_dmk(&problem, &SolverConfig::for_beta(1.9)).unwrap();
    let fast = run_dmk(&problem, &SolverConfig::for_beta(1.1)).unwrap();
    assert!(slow.steps.len() >= fast.steps.len());
}

fn problem_on2(mesh: &hyperflow_core::mesh::Mesh, seed: u64) -> TransportProblem<'_> {
    let params = ProblemParams {
        seed,
        ..ProblemParams::for_mesh_divisions(8, seed)
    };
    let (_, problem) = generate_problem(mesh, &params).unwrap();
    problem
}

#[test]
fn clamped_decay_run_converges_to_fixed_point() {
    // f ≡ 0 drives every conductivity to the floor, where the tau test
    // fires; the fixed-point residual is then bounded by the floor itself
    // (clamped triangles) or tau/dt (free triangles).
    let mesh = triangulate_unit_square(4).unwrap();
    let forcing = ForcingField::new(&mesh, vec![0.0; mesh.n_vertices()], vec![], vec![]).unwrap();
    let problem = TransportProblem {
        mesh: &mesh,
        forcing,
    };
    let config = SolverConfig {
        max_iter: 2000,
        ..SolverConfig::for_beta(1.5)
    };
    let run = run_dmk(&problem, &config).unwrap();
    assert!(run.converged, "decay-only run must hit the tau test");
    let last = run.final_step();
    let flux = compute_flux_magnitude(&mesh, &last.mu, &last.potential);
    let bound = (10.0 * config.tau / config.dt).max(config.mu_floor);
    for (t, (&mu, &q)) in last.mu.mu().iter().zip(&flux).enumerate() {
        let residual = (q.powf(config.beta) - mu).abs();
        assert!(
            residual <= bound,
            "triangle {t}: fixed-point residual {residual:e} above {bound:e}"
        );
    }
}

#[test]
fn whole_pipeline_is_deterministic() {
    let mesh = triangulate_unit_square(8).unwrap();
    let problem = problem_on2(&mesh, 99);
    let config = SolverConfig {
        max_iter: 60,
        ..SolverConfig::for_beta(1.4)
    };
    let run_a = run_dmk(&problem, &config).unwrap();
    let run_b = run_dmk(&problem, &config).unwrap();
    let analysis_a = analyze_run(&mesh, &run_a, config.beta, &AnalysisConfig::default()).unwrap();
    let analysis_b = analyze_run(&mesh, &run_b, config.beta, &AnalysisConfig::default()).unwrap();
    for (ta, tb) in analysis_a.traces.iter().zip(&analysis_b.traces) {
        assert_eq!(ta.key(), tb.key());
        for (&(time_a, va), &(time_b, vb)) in ta.values.iter().zip(&tb.values) {
            assert_eq!(time_a, time_b);
            assert_eq!(va.to_bits(), vb.to_bits(), "{} at t={time_a}", ta.key());
        }
    }
    assert_eq!(analysis_a.report.t_cost, analysis_b.report.t_cost);
    assert_eq!(analysis_a.report.t_property, analysis_b.report.t_property);
}

#[test]
fn mu_stays_above_floor_and_within_tau_semantics() {
    let mesh = triangulate_unit_square(8).unwrap();
    let problem = problem_on2(&mesh, 3);
    let config = SolverConfig {
        max_iter: 80,
        ..SolverConfig::for_beta(1.6)
    };
    let run = run_dmk(&problem, &config).unwrap();
    for step in &run.steps {
        assert!(step.mu.mu().iter().all(|&m| m >= config.mu_floor));
    }
    // the recorded per-step change is exactly the max-norm of the update
    for pair in run.steps.windows(2) {
        let expect = pair[1]
            .mu
            .mu()
            .iter()
            .zip(pair[0].mu.mu())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert_eq!(pair[1].mu_change, Some(expect));
    }
}

#[test]
fn initial_conductivity_is_uniform_unit() {
    let mesh = triangulate_unit_square(4).unwrap();
    let mu0 = ConductivityField::uniform(&mesh);
    assert!(mu0.mu().iter().all(|&m| m == 1.0));
    assert_eq!(mu0.time_index(), 0);
}
