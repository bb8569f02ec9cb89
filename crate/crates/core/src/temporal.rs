//! Temporal assembly: per-step metrics as traces, convergence times, and
//! cross-run aggregation.
//!
//! The two convergence markers are t_cost (first step where the Lyapunov
//! cost enters the factor-p band around its final value) and t_property
//! (the same scan applied to each extracted network property).

use crate::dmk::DmkRun;
use crate::extract::{graph_from_field, hypergraph_from_graph, ExtractError};
use crate::hyper::{graph_properties, hypergraph_properties};
use crate::mesh::Mesh;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("trace must be non-empty")]
    EmptyTrace,
    #[error("time indices must be strictly increasing at position {0}")]
    NonIncreasingTime(usize),
    #[error("aggregation requires at least one trace")]
    NoTraces,
    #[error("aggregation requires traces of one property; got {0} and {1}")]
    MixedTraces(String, String),
    #[error("extraction failed at time index {time_index}: {source}")]
    ExtractionAt {
        time_index: usize,
        #[source]
        source: ExtractError,
    },
}

/// Time series of one scalar metric from one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyTrace {
    pub name: String,
    /// s parameter for s-indexed properties, absent otherwise.
    pub s: Option<usize>,
    /// Traffic rate of the generating run; absent for image sequences.
    pub beta: Option<f64>,
    pub values: Vec<(usize, f64)>,
}

impl PropertyTrace {
    pub fn new(
        name: impl Into<String>,
        s: Option<usize>,
        beta: Option<f64>,
        values: Vec<(usize, f64)>,
    ) -> Result<Self, TemporalError> {
        if values.is_empty() {
            return Err(TemporalError::EmptyTrace);
        }
        for k in 1..values.len() {
            if values[k].0 <= values[k - 1].0 {
                return Err(TemporalError::NonIncreasingTime(k));
            }
        }
        Ok(Self {
            name: name.into(),
            s,
            beta,
            values,
        })
    }

    /// Unique key for reports: name plus the s suffix when present.
    pub fn key(&self) -> String {
        match self.s {
            Some(s) => format!("{}_s{}", self.name, s),
            None => self.name.clone(),
        }
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().expect("traces are non-empty").1
    }
}

/// Convergence markers of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// First time index where the cost enters the band.
    pub t_cost: usize,
    /// Per-property first entry times, keyed by trace key.
    pub t_property: BTreeMap<String, usize>,
    pub p: f64,
}

/// First time index t with v_t ≤ p·v_T, where v_T is the final value.
///
/// The scan counts the first touch even if the series later leaves the band
/// again; the set is never empty because v_T ≤ p·v_T for p ≥ 1, v_T ≥ 0.
pub fn convergence_time(trace: &PropertyTrace, p: f64) -> usize {
    debug_assert!(p >= 1.0, "band fraction p must be >= 1");
    let band = p * trace.final_value();
    trace
        .values
        .iter()
        .find(|(_, v)| *v <= band)
        .map(|(t, _)| *t)
        .expect("final value always lies inside its own band")
}

/// Extraction and analysis parameters shared by every run of a campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// s values for which s-degree and s-closeness traces are produced.
    pub s_values: Vec<usize>,
    pub threshold_ratio: f64,
    /// Band fraction for convergence times.
    pub p: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            s_values: vec![1, 2],
            // Off-support conductivities decay exponentially toward the
            // floor, so any small ratio selects the same converged network;
            // a very small one also tracks the late support compression that
            // a coarse cutoff would clip, which is what the property
            // convergence times measure.
            threshold_ratio: 1e-9,
            p: 1.05,
        }
    }
}

/// All traces of one run plus its convergence report.
#[derive(Debug, Clone)]
pub struct RunAnalysis {
    pub traces: Vec<PropertyTrace>,
    pub report: ConvergenceReport,
}

impl RunAnalysis {
    pub fn trace(&self, key: &str) -> Option<&PropertyTrace> {
        self.traces.iter().find(|t| t.key() == key)
    }
}

/// Per-step metric values, computed independently per time index.
struct StepMetrics {
    graph_edges: f64,
    graph_degree: f64,
    graph_closeness: f64,
    hyperedges: f64,
    triangles: f64,
    covered_area: f64,
    per_s: Vec<(usize, f64, f64)>, // (s, degree, closeness)
}

/// One analyzable state: a conductivity snapshot plus its cost row.
/// [`analyze_run`] borrows these straight from a run; the re-analysis path
/// rebuilds them from stored snapshots and manifest cost rows.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub mu: &'a crate::dmk::ConductivityField,
    pub cost: crate::dmk::CostBreakdown,
}

/// Extract graph + hypergraph at every time step of a run and assemble the
/// full trace set: cost components, graph properties, hypergraph properties,
/// and the convergence report.
pub fn analyze_run(
    mesh: &Mesh,
    run: &DmkRun,
    beta: f64,
    config: &AnalysisConfig,
) -> Result<RunAnalysis, TemporalError> {
    let views: Vec<StepView> = run
        .steps
        .iter()
        .map(|s| StepView {
            mu: &s.mu,
            cost: s.cost,
        })
        .collect();
    analyze_steps(mesh, &views, beta, config)
}

/// [`analyze_run`] over explicit per-step views.
pub fn analyze_steps(
    mesh: &Mesh,
    steps: &[StepView],
    beta: f64,
    config: &AnalysisConfig,
) -> Result<RunAnalysis, TemporalError> {
    let metrics: Vec<StepMetrics> = steps
        .par_iter()
        .map(|step| {
            let graph = graph_from_field(mesh, step.mu, config.threshold_ratio).map_err(
                |source| TemporalError::ExtractionAt {
                    time_index: step.mu.time_index(),
                    source,
                },
            )?;
            let h = hypergraph_from_graph(&graph);
            let g_props = graph_properties(&graph);
            let base = hypergraph_properties(&h, 1);
            let per_s = config
                .s_values
                .iter()
                .map(|&s| {
                    let props = hypergraph_properties(&h, s);
                    (s, props.avg_s_degree, props.avg_s_closeness)
                })
                .collect();
            Ok(StepMetrics {
                graph_edges: g_props.edge_count as f64,
                graph_degree: g_props.avg_degree,
                graph_closeness: g_props.avg_closeness,
                hyperedges: base.hyperedge_count as f64,
                triangles: base.triangle_count as f64,
                covered_area: base.covered_area,
                per_s,
            })
        })
        .collect::<Result<_, _>>()?;

    let times: Vec<usize> = steps.iter().map(|s| s.mu.time_index()).collect();
    let series = |extractor: &dyn Fn(&StepMetrics) -> f64| -> Vec<(usize, f64)> {
        times
            .iter()
            .zip(&metrics)
            .map(|(&t, m)| (t, extractor(m)))
            .collect()
    };

    let beta = Some(beta);
    let mut traces = vec![
        PropertyTrace::new(
            "cost_total",
            None,
            beta,
            times
                .iter()
                .zip(steps)
                .map(|(&t, s)| (t, s.cost.total))
                .collect(),
        )?,
        PropertyTrace::new(
            "cost_energy",
            None,
            beta,
            times
                .iter()
                .zip(steps)
                .map(|(&t, s)| (t, s.cost.energy))
                .collect(),
        )?,
        PropertyTrace::new(
            "cost_structure",
            None,
            beta,
            times
                .iter()
                .zip(steps)
                .map(|(&t, s)| (t, s.cost.structure))
                .collect(),
        )?,
        PropertyTrace::new("graph_edges", None, beta, series(&|m| m.graph_edges))?,
        PropertyTrace::new("graph_degree", None, beta, series(&|m| m.graph_degree))?,
        PropertyTrace::new(
            "graph_closeness",
            None,
            beta,
            series(&|m| m.graph_closeness),
        )?,
        PropertyTrace::new("hyperedges", None, beta, series(&|m| m.hyperedges))?,
        PropertyTrace::new("triangles", None, beta, series(&|m| m.triangles))?,
        PropertyTrace::new("covered_area", None, beta, series(&|m| m.covered_area))?,
    ];
    for (k, &s) in config.s_values.iter().enumerate() {
        traces.push(PropertyTrace::new(
            "s_degree",
            Some(s),
            beta,
            series(&|m| m.per_s[k].1),
        )?);
        traces.push(PropertyTrace::new(
            "s_closeness",
            Some(s),
            beta,
            series(&|m| m.per_s[k].2),
        )?);
    }

    let t_cost = convergence_time(
        traces.iter().find(|t| t.name == "cost_total").unwrap(),
        config.p,
    );
    let t_property = traces
        .iter()
        .filter(|t| !t.name.starts_with("cost_"))
        .map(|t| (t.key(), convergence_time(t, config.p)))
        .collect();

    Ok(RunAnalysis {
        traces,
        report: ConvergenceReport {
            t_cost,
            t_property,
            p: config.p,
        },
    })
}

/// One aggregated time point: mean and population standard deviation over
/// the runs, with the contributing sample count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean/std series over runs of the same property.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateTrace {
    pub name: String,
    pub s: Option<usize>,
    pub beta: Option<f64>,
    pub rows: Vec<AggregateRow>,
}

/// Align traces by time index and reduce to per-index mean and population
/// standard deviation. Runs that ended early hold their final value forward,
/// matching the converged plateau they physically stay on.
pub fn aggregate(traces: &[&PropertyTrace]) -> Result<AggregateTrace, TemporalError> {
    let first = *traces.first().ok_or(TemporalError::NoTraces)?;
    for t in traces {
        if t.name != first.name || t.s != first.s {
            return Err(TemporalError::MixedTraces(first.key(), t.key()));
        }
    }
    let horizon = traces
        .iter()
        .map(|t| t.values.last().unwrap().0)
        .max()
        .unwrap();
    let n = traces.len();
    let mut rows = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let samples: Vec<f64> = traces.iter().map(|trace| value_at(trace, t)).collect();
        // identical samples reduce exactly, so converged plateaus show 0 std
        let (mean, std) = if samples.windows(2).all(|w| w[0] == w[1]) {
            (samples[0], 0.0)
        } else {
            let mean = samples.iter().sum::<f64>() / n as f64;
            let variance =
                samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            (mean, variance.sqrt())
        };
        rows.push(AggregateRow { t, mean, std, n });
    }
    Ok(AggregateTrace {
        name: first.name.clone(),
        s: first.s,
        beta: first.beta,
        rows,
    })
}

/// Value of a trace at time t, holding the final value past the end.
/// Time indices are dense from the first entry in every trace we build, so a
/// linear scan with carry handles sparse indices too.
fn value_at(trace: &PropertyTrace, t: usize) -> f64 {
    let mut current = trace.values[0].1;
    for &(ti, v) in &trace.values {
        if ti > t {
            break;
        }
        current = v;
    }
    current
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|s| s.to_string()).unwrap_or_default()
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

/// Trace CSV: `t,beta,run_id,property,s,value`, traces in given order.
pub fn write_trace_csv<W: Write>(
    out: &mut W,
    run_id: &str,
    traces: &[PropertyTrace],
) -> io::Result<()> {
    writeln!(out, "t,beta,run_id,property,s,value")?;
    for trace in traces {
        for &(t, v) in &trace.values {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t,
                fmt_opt_f64(trace.beta),
                run_id,
                trace.name,
                fmt_opt_usize(trace.s),
                v
            )?;
        }
    }
    Ok(())
}

/// Aggregate CSV: `t,beta,property,s,mean,std,n`.
pub fn write_aggregate_csv<W: Write>(out: &mut W, aggregates: &[AggregateTrace]) -> io::Result<()> {
    writeln!(out, "t,beta,property,s,mean,std,n")?;
    for agg in aggregates {
        for row in &agg.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.t,
                fmt_opt_f64(agg.beta),
                agg.name,
                fmt_opt_usize(agg.s),
                row.mean,
                row.std,
                row.n
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: &[f64]) -> PropertyTrace {
        PropertyTrace::new(
            "test",
            None,
            Some(1.5),
            values.iter().cloned().enumerate().collect(),
        )
        .unwrap()
    }

    #[test]
    fn convergence_scan_finds_first_entry() {
        assert_eq!(convergence_time(&trace(&[10.0, 5.0, 2.0, 1.0, 1.0]), 1.05), 3);
    }

    #[test]
    fn constant_trace_converges_immediately() {
        assert_eq!(convergence_time(&trace(&[3.0, 3.0, 3.0]), 1.05), 0);
    }

    #[test]
    fn first_touch_counts_even_if_it_rises_again() {
        assert_eq!(convergence_time(&trace(&[4.0, 1.0, 3.0, 1.0]), 1.05), 1);
    }

    #[test]
    fn convergence_time_never_exceeds_last_index() {
        let t = trace(&[5.0, 4.0, 6.0, 2.0]);
        for p in [1.0, 1.05, 1.5, 3.0] {
            assert!(convergence_time(&t, p) <= t.values.len() - 1);
        }
    }

    #[test]
    fn monotone_trace_time_non_increasing_in_p() {
        let t = trace(&[10.0, 8.0, 5.0, 3.0, 2.0, 1.5, 1.2, 1.1, 1.0]);
        let mut last = usize::MAX;
        for p in [1.0, 1.02, 1.05, 1.2, 1.5, 2.0] {
            let time = convergence_time(&t, p);
            assert!(time <= last);
            last = time;
        }
    }

    #[test]
    fn trace_validation() {
        assert!(matches!(
            PropertyTrace::new("x", None, None, vec![]),
            Err(TemporalError::EmptyTrace)
        ));
        assert!(matches!(
            PropertyTrace::new("x", None, None, vec![(0, 1.0), (0, 2.0)]),
            Err(TemporalError::NonIncreasingTime(1))
        ));
    }

    #[test]
    fn aggregate_single_trace() {
        let t = trace(&[2.0, 4.0]);
        let agg = aggregate(&[&t]).unwrap();
        assert_eq!(agg.rows.len(), 2);
        assert_eq!(agg.rows[0].mean, 2.0);
        assert_eq!(agg.rows[1].mean, 4.0);
        assert!(agg.rows.iter().all(|r| r.std == 0.0 && r.n == 1));
    }

    #[test]
    fn aggregate_two_constant_traces() {
        let a = trace(&[2.0, 2.0]);
        let b = trace(&[4.0, 4.0]);
        let agg = aggregate(&[&a, &b]).unwrap();
        for row in &agg.rows {
            assert_eq!(row.mean, 3.0);
            assert_eq!(row.std, 1.0); // population std of {2, 4}
            assert_eq!(row.n, 2);
        }
    }

    #[test]
    fn aggregate_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        let traces: Vec<PropertyTrace> = (0..10)
            .map(|_| {
                let len = rng.gen_range(3..8);
                trace(&(0..len).map(|_| rng.gen::<f64>()).collect::<Vec<_>>())
            })
            .collect();
        let refs: Vec<&PropertyTrace> = traces.iter().collect();
        let agg = aggregate(&refs).unwrap();

        // independent two-pass mean/std with explicit hold-forward padding
        let horizon = traces.iter().map(|t| t.values.len() - 1).max().unwrap();
        for t in 0..=horizon {
            let samples: Vec<f64> = traces
                .iter()
                .map(|tr| {
                    let idx = t.min(tr.values.len() - 1);
                    tr.values[idx].1
                })
                .collect();
            let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
            let var: f64 =
                samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64;
            assert!((agg.rows[t].mean - mean).abs() < 1e-12);
            assert!((agg.rows[t].std - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_of_identical_traces_has_zero_std() {
        let a = trace(&[3.0, 2.0, 1.0]);
        let b = trace(&[3.0, 2.0, 1.0]);
        let agg = aggregate(&[&a, &b]).unwrap();
        assert!(agg.rows.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn aggregate_rejects_empty_and_mixed() {
        assert!(matches!(aggregate(&[]), Err(TemporalError::NoTraces)));
        let a = trace(&[1.0]);
        let mut b = trace(&[1.0]);
        b.name = "other".into();
        assert!(matches!(
            aggregate(&[&a, &b]),
            Err(TemporalError::MixedTraces(..))
        ));
    }

    #[test]
    fn trace_csv_format() {
        let t = PropertyTrace::new("covered_area", None, Some(1.5), vec![(0, 1.0), (1, 0.5)])
            .unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, "run0", &[t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,beta,run_id,property,s,value\n0,1.5,run0,covered_area,,1\n1,1.5,run0,covered_area,,0.5\n"
        );
    }

    #[test]
    fn analyze_run_reports_offending_time_index() {
        use crate::dmk::{run_dmk, ForcingField, SolverConfig, TransportProblem};
        use crate::mesh::triangulate_unit_square;
        let mesh = triangulate_unit_square(2).unwrap();
        let forcing =
            ForcingField::new(&mesh, vec![0.0; mesh.n_vertices()], vec![], vec![]).unwrap();
        let problem = TransportProblem {
            forcing,
            mesh: &mesh,
        };
        let config = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        let run = run_dmk(&problem, &config).unwrap();
        let bad = AnalysisConfig {
            threshold_ratio: 1.5, // outside (0, 1)
            ..AnalysisConfig::default()
        };
        let err = analyze_run(&mesh, &run, config.beta, &bad).unwrap_err();
        assert!(matches!(err, TemporalError::ExtractionAt { time_index: 0, .. }));
    }

    #[test]
    fn analyze_run_single_state() {
        use crate::dmk::{run_dmk, ForcingField, SolverConfig, TransportProblem};
        use crate::mesh::triangulate_unit_square;
        let mesh = triangulate_unit_square(4).unwrap();
        let w = mesh.vertex_areas();
        let mut values = vec![0.0; mesh.n_vertices()];
        values[0] = 1.0 / w[0];
        let last = mesh.n_vertices() - 1;
        values[last] = -1.0 / w[last];
        let problem = TransportProblem {
            forcing: ForcingField::new(&mesh, values, vec![0], vec![last]).unwrap(),
            mesh: &mesh,
        };
        let config = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        let run = run_dmk(&problem, &config).unwrap();
        let analysis = analyze_run(&mesh, &run, config.beta, &AnalysisConfig::default()).unwrap();
        for trace in &analysis.traces {
            assert_eq!(trace.values.len(), 1, "{}", trace.key());
        }
        assert_eq!(analysis.report.t_cost, 0);
        assert!(analysis.report.t_property.values().all(|&t| t == 0));
        // 9 base traces + 2 per s value
        assert_eq!(analysis.traces.len(), 9 + 2 * 2);
    }
}
