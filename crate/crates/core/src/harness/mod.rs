//! Convergence and stability studies, CSV reports, VTK export and the CLI.

pub mod cli;
pub mod config;
pub mod report;
pub mod vtk;

use std::time::Instant;

use rayon::prelude::*;

use crate::fem::QuadratureRule;
use crate::manufactured::{error_norms, exact_norms, relative_errors, ErrorRecord, ExactSolution};
use crate::mesh::Mesh;
use crate::schemes::{
    cosine_concentration, run_simulation_observed, stream_velocity, Discretization, FieldNorms, FieldState, Mode,
    ProblemData, RunSummary, Unforced,
};

pub use config::{ConfigError, RunConfig, TauRule};
pub use report::ConvergenceReport;

/// Largest solver residuals seen during one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub steps: usize,
    pub max_flow_residual: f64,
    pub max_concentration_residual: f64,
}

impl SolverStats {
    fn of(summary: &RunSummary) -> Self {
        let mut s = SolverStats { steps: summary.diagnostics.len(), ..Default::default() };
        for d in &summary.diagnostics {
            s.max_flow_residual = s.max_flow_residual.max(d.flow_residual);
            s.max_concentration_residual = s.max_concentration_residual.max(d.concentration_residual);
        }
        s
    }
}

/// Result of one mesh size in a study.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub subdivisions: usize,
    pub result: Result<T, String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedRun {
    pub record: ErrorRecord,
    pub stats: SolverStats,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub h: f64,
    pub tau: f64,
    pub subdivisions: usize,
    pub initial: FieldNorms,
    pub last: FieldNorms,
    /// Largest `|u_h|_L2 + |c_h|_L2` over all time levels, the initial one included.
    pub max_energy: f64,
    pub stats: SolverStats,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub header: Vec<String>,
    pub runs: Vec<RunOutcome<StabilityRow>>,
}

impl StabilityReport {
    pub fn rows(&self) -> Vec<&StabilityRow> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok()).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.runs.iter().filter_map(|r| r.result.as_ref().err().map(|e| (r.subdivisions, e.as_str()))).collect()
    }
}

/// A single run with the states kept for export.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub discretization: Discretization,
    pub summary: RunSummary,
    /// Requested snapshot times paired with the nearest time level.
    pub snapshots: Vec<(f64, FieldState)>,
}

pub fn discretize(cfg: &RunConfig, n: usize, mode: Mode) -> Result<Discretization, String> {
    let mesh = Mesh::unit_square(n).map_err(|e| e.to_string())?;
    let quad = QuadratureRule::with_degree(cfg.quadrature_degree).map_err(|e| e.to_string())?;
    Discretization::new(mesh, cfg.params_for(n), mode, quad).map_err(|e| e.to_string())
}

fn initial_state(d: &Discretization) -> (FieldState, Box<dyn ProblemData>) {
    match d.mode {
        Mode::Manufactured => {
            let exact = ExactSolution::new(d.params);
            let s0 = d.initial_state(|x| exact.velocity(x, 0.0), |x| exact.concentration(x, 0.0));
            (s0, Box::new(exact))
        }
        Mode::Physical => (d.initial_state(stream_velocity, cosine_concentration), Box::new(Unforced)),
    }
}

fn timed<T>(n: usize, f: impl FnOnce() -> Result<T, String>) -> RunOutcome<T> {
    let start = Instant::now();
    let result = f();
    RunOutcome { subdivisions: n, result, wall_seconds: start.elapsed().as_secs_f64() }
}

/// Manufactured run on an `n x n` mesh with errors at every time level.
pub fn manufactured_run(cfg: &RunConfig, n: usize) -> Result<ManufacturedRun, String> {
    let d = discretize(cfg, n, Mode::Manufactured)?;
    let exact = ExactSolution::new(d.params);
    let s0 = d.initial_state(|x| exact.velocity(x, 0.0), |x| exact.concentration(x, 0.0));
    let mut acc = [0.0f64; 3];
    let summary = run_simulation_observed(&d, cfg.scheme, &exact, s0, &mut |s, _| {
        let e = error_norms(&d, s, &exact, s.time);
        acc[0] += e.velocity_l2 * e.velocity_l2;
        acc[1] += e.concentration_l2 * e.concentration_l2;
        acc[2] += e.pressure_l2 * e.pressure_l2;
    })
    .map_err(|e| e.to_string())?;
    let last = &summary.final_state;
    let errors = error_norms(&d, last, &exact, last.time);
    let reference = exact_norms(&d, &exact, last.time);
    let tau = d.params.time_step;
    let record = ErrorRecord {
        h: 1.0 / n as f64,
        tau,
        subdivisions: n,
        errors,
        relative: relative_errors(&errors, &reference),
        discrete: d.norms(last),
        l2_in_time: acc.map(|a| (tau * a).sqrt()),
    };
    Ok(ManufacturedRun { record, stats: SolverStats::of(&summary), warnings: summary.warnings })
}

/// Runs every mesh size of a manufactured study, in parallel, and gathers
/// the rows in the configured order.
pub fn run_convergence_study(cfg: &RunConfig) -> ConvergenceReport {
    let runs = cfg.sizes.par_iter().map(|&n| timed(n, || manufactured_run(cfg, n))).collect();
    ConvergenceReport { header: cfg.header_lines(), runs }
}

pub fn stability_run(cfg: &RunConfig, n: usize) -> Result<StabilityRow, String> {
    let d = discretize(cfg, n, cfg.mode)?;
    let (s0, data) = initial_state(&d);
    let initial = d.norms(&s0);
    let mut max_energy = initial.velocity_l2 + initial.concentration_l2;
    let summary = run_simulation_observed(&d, cfg.scheme, data.as_ref(), s0, &mut |_, diag| {
        max_energy = max_energy.max(diag.norms.velocity_l2 + diag.norms.concentration_l2);
    })
    .map_err(|e| e.to_string())?;
    Ok(StabilityRow {
        h: 1.0 / n as f64,
        tau: d.params.time_step,
        subdivisions: n,
        initial,
        last: d.norms(&summary.final_state),
        max_energy,
        stats: SolverStats::of(&summary),
        warnings: summary.warnings,
    })
}

/// Final-time discrete norms over the configured mesh sizes.
pub fn run_stability_study(cfg: &RunConfig) -> StabilityReport {
    let runs = cfg.sizes.par_iter().map(|&n| timed(n, || stability_run(cfg, n))).collect();
    StabilityReport { header: cfg.header_lines(), runs }
}

/// One run on an `n x n` mesh keeping the states nearest to `times`.
pub fn single_run(cfg: &RunConfig, n: usize, times: &[f64]) -> Result<SingleRun, String> {
    let d = discretize(cfg, n, cfg.mode)?;
    let (s0, data) = initial_state(&d);
    let tau = d.params.time_step;
    let level = |t: f64| (t / tau).round() as usize;
    let mut snapshots: Vec<(f64, FieldState)> =
        times.iter().filter(|&&t| level(t) == 0).map(|&t| (t, s0.clone())).collect();
    let summary = run_simulation_observed(&d, cfg.scheme, data.as_ref(), s0, &mut |s, _| {
        for &t in times.iter().filter(|&&t| level(t) == s.step) {
            snapshots.push((t, s.clone()));
        }
    })
    .map_err(|e| e.to_string())?;
    snapshots.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SingleRun { discretization: d, summary, snapshots })
}
