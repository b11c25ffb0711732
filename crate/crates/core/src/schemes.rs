//! Decoupled and fully coupled BDF2 time stepping, each started by one
//! backward Euler step.
//!
//! All nonlinear coefficients are lagged, so every step is one linear solve
//! (coupled) or two (decoupled). Unknowns are ordered velocity, pressure,
//! concentration in the monolithic system.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::assembly::{
    assemble_convection_skew, assemble_load_scalar, assemble_load_vector, assemble_viscous, AssemblyError,
    DiscreteOperatorSet, ModelParams, ParamError,
};
use crate::fem::{interpolate_scalar, interpolate_vector, DofMap, QuadratureRule, SpaceKind};
use crate::linalg::{solve, ConstrainedSystem, MeanConstraint, SolveError, SparseMatrix, TripletBuilder};
use crate::mesh::Mesh;

/// Backward Euler stencil `(v^{n+1} - v^n) / tau`, coefficients of
/// `v^{n+1}, v^n, v^{n-1}` times `tau`.
pub const EULER_STENCIL: [f64; 3] = [1.0, -1.0, 0.0];
/// BDF2 stencil `(3 v^{n+1} - 4 v^n + v^{n-1}) / (2 tau)`, times `tau`.
pub const BDF2_STENCIL: [f64; 3] = [1.5, -2.0, 0.5];

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("final time {final_time} is not a whole number (at least 2) of steps of size {time_step}")]
    StepCount { final_time: f64, time_step: f64 },
    #[error("assembly failed at step {step}: {source}")]
    Assembly { step: usize, source: AssemblyError },
    #[error("linear solve failed at step {step}: {source}")]
    Solve { step: usize, source: SolveError },
    #[error("non-finite {field} at step {step}")]
    NonFinite { step: usize, field: &'static str },
    #[error("state does not match the discretization: {0}")]
    StateMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Decoupled,
    Coupled,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Decoupled => "decoupled",
            Scheme::Coupled => "coupled",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "decoupled" => Ok(Scheme::Decoupled),
            "coupled" => Ok(Scheme::Coupled),
            other => Err(format!("unknown scheme '{other}' (expected decoupled or coupled)")),
        }
    }
}

/// Physical mode: no-slip walls, zero-flux concentration with zero mean.
/// Manufactured mode: Dirichlet data for velocity and concentration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Physical,
    Manufactured,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Physical => "physical",
            Mode::Manufactured => "manufactured",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "physical" => Ok(Mode::Physical),
            "manufactured" => Ok(Mode::Manufactured),
            other => Err(format!("unknown mode '{other}' (expected physical or manufactured)")),
        }
    }
}

/// Sources and boundary values of a run.
pub trait ProblemData: Sync {
    fn momentum_source(&self, x: [f64; 2], t: f64) -> [f64; 2];
    fn concentration_source(&self, x: [f64; 2], t: f64) -> f64;
    fn velocity_trace(&self, x: [f64; 2], t: f64) -> [f64; 2];
    /// Only used in manufactured mode.
    fn concentration_trace(&self, x: [f64; 2], t: f64) -> f64;
}

/// Unforced flow between no-slip walls.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unforced;

impl ProblemData for Unforced {
    fn momentum_source(&self, _: [f64; 2], _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn concentration_source(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
    fn velocity_trace(&self, _: [f64; 2], _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn concentration_trace(&self, _: [f64; 2], _: f64) -> f64 {
        0.0
    }
}

/// Mesh, spaces and the operators that do not change in time.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub velocity: DofMap,
    pub pressure: DofMap,
    pub concentration: DofMap,
    pub quad: QuadratureRule,
    pub ops: DiscreteOperatorSet,
    pub params: ModelParams,
    pub mode: Mode,
}

impl Discretization {
    pub fn new(mesh: Mesh, params: ModelParams, mode: Mode, quad: QuadratureRule) -> Result<Self, SchemeError> {
        params.validate()?;
        let velocity = DofMap::new(&mesh, SpaceKind::P1BubbleVector);
        let pressure = DofMap::new(&mesh, SpaceKind::P1PressureZeroMean);
        let concentration = DofMap::new(
            &mesh,
            match mode {
                Mode::Physical => SpaceKind::P1ScalarZeroMean,
                Mode::Manufactured => SpaceKind::P1Scalar,
            },
        );
        let ops = DiscreteOperatorSet::assemble(&mesh, &velocity, &pressure, &concentration, &quad, &params)
            .map_err(|source| SchemeError::Assembly { step: 0, source })?;
        Ok(Self { mesh, velocity, pressure, concentration, quad, ops, params, mode })
    }

    pub fn nv(&self) -> usize {
        self.velocity.n_dofs()
    }

    pub fn np(&self) -> usize {
        self.pressure.n_dofs()
    }

    pub fn nc(&self) -> usize {
        self.concentration.n_dofs()
    }

    /// Discrete mean `(1, p) / |Omega|` of a pressure vector.
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        dot(&self.ops.pressure_weights, p)
    }

    pub fn concentration_mean(&self, c: &[f64]) -> f64 {
        dot(&self.ops.concentration_weights, c)
    }

    /// Interpolates initial fields; in physical mode the concentration is
    /// shifted to zero mean.
    pub fn initial_state(&self, u0: impl Fn([f64; 2]) -> [f64; 2], c0: impl Fn([f64; 2]) -> f64) -> FieldState {
        let u = interpolate_vector(&self.mesh, &self.velocity, u0);
        let mut c = interpolate_scalar(&self.mesh, &self.concentration, c0);
        if self.mode == Mode::Physical {
            let m = self.concentration_mean(&c);
            c.iter_mut().for_each(|v| *v -= m);
        }
        FieldState {
            u_prev: u.clone(),
            u_curr: u,
            c_prev: c.clone(),
            c_curr: c,
            p_curr: vec![0.0; self.np()],
            step: 0,
            time: 0.0,
        }
    }

    pub fn norms(&self, state: &FieldState) -> FieldNorms {
        let o = &self.ops;
        let ul2 = o.velocity_mass.bilinear(&state.u_curr, &state.u_curr);
        let cl2 = o.concentration_mass.bilinear(&state.c_curr, &state.c_curr);
        FieldNorms {
            velocity_l2: ul2.max(0.0).sqrt(),
            velocity_h1: (ul2 + o.velocity_stiffness.bilinear(&state.u_curr, &state.u_curr)).max(0.0).sqrt(),
            concentration_l2: cl2.max(0.0).sqrt(),
            concentration_h1: (cl2 + o.concentration_stiffness.bilinear(&state.c_curr, &state.c_curr)).max(0.0).sqrt(),
            pressure_l2: o.pressure_mass.bilinear(&state.p_curr, &state.p_curr).max(0.0).sqrt(),
        }
    }
}

/// Two consecutive time levels of velocity and concentration and the
/// latest pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u_prev: Vec<f64>,
    pub u_curr: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c_curr: Vec<f64>,
    pub p_curr: Vec<f64>,
    pub step: usize,
    pub time: f64,
}

impl FieldState {
    /// `2 u^n - u^{n-1}`
    pub fn u_hat(&self) -> Vec<f64> {
        extrapolate(&self.u_curr, &self.u_prev)
    }

    /// `2 c^n - c^{n-1}`
    pub fn c_hat(&self) -> Vec<f64> {
        extrapolate(&self.c_curr, &self.c_prev)
    }

    fn check(&self, d: &Discretization) -> Result<(), SchemeError> {
        let lens = [
            ("u_prev", self.u_prev.len(), d.nv()),
            ("u_curr", self.u_curr.len(), d.nv()),
            ("c_prev", self.c_prev.len(), d.nc()),
            ("c_curr", self.c_curr.len(), d.nc()),
            ("p_curr", self.p_curr.len(), d.np()),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(SchemeError::StateMismatch(format!("{name} has length {got}, expected {want}")));
            }
        }
        Ok(())
    }
}

fn extrapolate(curr: &[f64], prev: &[f64]) -> Vec<f64> {
    curr.iter().zip(prev).map(|(a, b)| 2.0 * a - b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldNorms {
    pub velocity_l2: f64,
    pub velocity_h1: f64,
    pub concentration_l2: f64,
    pub concentration_h1: f64,
    pub pressure_l2: f64,
}

impl FieldNorms {
    pub fn all_finite(&self) -> bool {
        [self.velocity_l2, self.velocity_h1, self.concentration_l2, self.concentration_h1, self.pressure_l2]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub norms: FieldNorms,
    /// Relative residual of the flow solve (the monolithic one when coupled).
    pub flow_residual: f64,
    /// Relative residual of the concentration solve; equals `flow_residual`
    /// for the coupled scheme.
    pub concentration_residual: f64,
    /// Relative residual of the mass-weighted telescope identity; absent on
    /// the first step.
    pub velocity_telescope: Option<f64>,
    pub concentration_telescope: Option<f64>,
    /// `|v^T N v| / sum |v_i N_ij v_j|` for the new iterates.
    pub velocity_convection: f64,
    pub concentration_convection: f64,
    pub pressure_mean: f64,
    pub concentration_mean: f64,
}

/// Relative residual of
/// `(D v, v)_M = 1/(4 tau) (|v|^2 - |v^n|^2 + |v^_{n+1}|^2 - |v^_n|^2 + |v - 2v^n + v^{n-1}|^2)`
/// with `v = v^{n+1}` and the BDF2 `D`.
pub fn telescope_residual(mass: &SparseMatrix, next: &[f64], curr: &[f64], prev: &[f64], tau: f64) -> f64 {
    let dv: Vec<f64> = (0..next.len())
        .map(|i| (BDF2_STENCIL[0] * next[i] + BDF2_STENCIL[1] * curr[i] + BDF2_STENCIL[2] * prev[i]) / tau)
        .collect();
    let lhs = mass.bilinear(&dv, next);
    let hat_next = extrapolate(next, curr);
    let hat_curr = extrapolate(curr, prev);
    let second: Vec<f64> = (0..next.len()).map(|i| next[i] - 2.0 * curr[i] + prev[i]).collect();
    let terms = [
        mass.bilinear(next, next),
        -mass.bilinear(curr, curr),
        mass.bilinear(&hat_next, &hat_next),
        -mass.bilinear(&hat_curr, &hat_curr),
        mass.bilinear(&second, &second),
    ];
    let rhs: f64 = terms.iter().sum::<f64>() / (4.0 * tau);
    let scale = lhs.abs().max(terms.iter().map(|t| t.abs()).sum::<f64>() / (4.0 * tau));
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

fn convection_ratio(n: &SparseMatrix, v: &[f64]) -> f64 {
    let mut signed = 0.0;
    let mut abs = 0.0;
    for i in 0..n.nrows() {
        for (j, a) in n.row(i) {
            let t = v[i] * a * v[j];
            signed += t;
            abs += t.abs();
        }
    }
    if abs == 0.0 {
        0.0
    } else {
        signed.abs() / abs
    }
}

fn finite(v: &[f64], step: usize, field: &'static str) -> Result<(), SchemeError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SchemeError::NonFinite { step, field })
    }
}

/// Lagged quantities and stencil of one step.
struct StepInputs {
    stencil: [f64; 3],
    wind: Vec<f64>,
    c_lag: Vec<f64>,
}

fn inputs(state: &FieldState, first: bool) -> StepInputs {
    if first {
        StepInputs { stencil: EULER_STENCIL, wind: state.u_curr.clone(), c_lag: state.c_curr.clone() }
    } else {
        StepInputs { stencil: BDF2_STENCIL, wind: state.u_hat(), c_lag: state.c_hat() }
    }
}

/// Velocity block `a0/tau M + A(nu) + N(w)` and its history/load right-hand
/// side (without buoyancy coupling).
fn momentum_block(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
    inp: &StepInputs,
    t_next: f64,
    step: usize,
) -> Result<(SparseMatrix, SparseMatrix, Vec<f64>), SchemeError> {
    let tau = d.params.time_step;
    let asm = |source| SchemeError::Assembly { step, source };
    let viscous = assemble_viscous(&d.mesh, &d.velocity, &d.quad, &d.params, &inp.c_lag).map_err(asm)?;
    let convection = assemble_convection_skew(&d.mesh, &d.velocity, &d.quad, &d.velocity, &inp.wind).map_err(asm)?;
    let [a0, a1, a2] = inp.stencil;
    let matrix =
        SparseMatrix::linear_combination(&[(a0 / tau, &d.ops.velocity_mass), (1.0, &viscous), (1.0, &convection)]);
    let history: Vec<f64> = state.u_curr.iter().zip(&state.u_prev).map(|(c, p)| -(a1 * c + a2 * p) / tau).collect();
    let mut rhs = d.ops.velocity_mass.mul_vec(&history);
    let load = assemble_load_vector(&d.mesh, &d.velocity, &d.quad, |x| data.momentum_source(x, t_next)).map_err(asm)?;
    for i in 0..rhs.len() {
        rhs[i] += load[i] + d.ops.buoyancy.constant[i];
    }
    Ok((matrix, convection, rhs))
}

/// Concentration block `a0/tau M + theta K + N_c(w)` and its right-hand side
/// with the history, source and `U alpha` terms.
fn concentration_block(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
    inp: &StepInputs,
    t_next: f64,
    step: usize,
) -> Result<(SparseMatrix, SparseMatrix, Vec<f64>), SchemeError> {
    let tau = d.params.time_step;
    let asm = |source| SchemeError::Assembly { step, source };
    let convection =
        assemble_convection_skew(&d.mesh, &d.concentration, &d.quad, &d.velocity, &inp.wind).map_err(asm)?;
    let [a0, a1, a2] = inp.stencil;
    let matrix = SparseMatrix::linear_combination(&[
        (a0 / tau, &d.ops.concentration_mass),
        (1.0, &d.ops.diffusion),
        (1.0, &convection),
    ]);
    let history: Vec<f64> = state.c_curr.iter().zip(&state.c_prev).map(|(c, p)| -(a1 * c + a2 * p) / tau).collect();
    let mut rhs = d.ops.concentration_mass.mul_vec(&history);
    if d.mode == Mode::Manufactured {
        let load = assemble_load_scalar(&d.mesh, &d.concentration, &d.quad, |x| data.concentration_source(x, t_next))
            .map_err(asm)?;
        for (r, l) in rhs.iter_mut().zip(&load) {
            *r += l;
        }
    }
    for (r, s) in rhs.iter_mut().zip(&d.ops.swim_rhs) {
        *r += s;
    }
    Ok((matrix, convection, rhs))
}

fn impose_velocity(
    sys: &mut ConstrainedSystem,
    d: &Discretization,
    data: &dyn ProblemData,
    t: f64,
) -> Result<(), SolveError> {
    for node in d.mesh.boundary_nodes() {
        let g = data.velocity_trace(d.mesh.nodes()[node], t);
        sys.fix(d.velocity.node_dof(node, 0), g[0])?;
        sys.fix(d.velocity.node_dof(node, 1), g[1])?;
    }
    Ok(())
}

fn condense_bubbles(sys: &mut ConstrainedSystem, d: &Discretization) {
    for t in 0..d.mesh.triangle_count() {
        let dofs = (0..2).filter_map(|k| d.velocity.bubble_dof(t, k)).collect();
        sys.add_local_group(dofs);
    }
}

fn impose_concentration(
    sys: &mut ConstrainedSystem,
    d: &Discretization,
    data: &dyn ProblemData,
    t: f64,
    offset: usize,
) -> Result<(), SolveError> {
    match d.mode {
        Mode::Manufactured => {
            for node in d.mesh.boundary_nodes() {
                sys.fix(offset + node, data.concentration_trace(d.mesh.nodes()[node], t))?;
            }
        }
        Mode::Physical => sys.add_mean_constraint(MeanConstraint::zero_mean(&d.ops.concentration_weights, offset)),
    }
    Ok(())
}

struct Solved {
    u: Vec<f64>,
    p: Vec<f64>,
    c: Vec<f64>,
    flow_residual: f64,
    concentration_residual: f64,
    velocity_convection: SparseMatrix,
    concentration_convection: SparseMatrix,
}

fn solve_decoupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
    inp: &StepInputs,
    t_next: f64,
    step: usize,
) -> Result<Solved, SchemeError> {
    let (nv, np) = (d.nv(), d.np());
    let solve_err = |source| SchemeError::Solve { step, source };

    let (k_u, n_u, mut rhs_u) = momentum_block(d, data, state, inp, t_next, step)?;
    let buoy = d.ops.buoyancy.coupling.mul_vec(&inp.c_lag);
    for (r, b) in rhs_u.iter_mut().zip(&buoy) {
        *r += b;
    }
    let mut b = TripletBuilder::with_capacity(nv + np, nv + np, k_u.nnz() + 2 * d.ops.divergence.nnz());
    b.add_matrix(&k_u, 0, 0, 1.0);
    b.add_transpose(&d.ops.divergence, 0, nv, -1.0);
    b.add_matrix(&d.ops.divergence, nv, 0, -1.0);
    let mut rhs = rhs_u;
    rhs.resize(nv + np, 0.0);
    let mut flow = ConstrainedSystem::new(b.build(), rhs);
    impose_velocity(&mut flow, d, data, t_next).map_err(solve_err)?;
    flow.add_gauge(MeanConstraint::zero_mean(&d.ops.pressure_weights, nv));
    condense_bubbles(&mut flow, d);
    let flow_sol = solve(&flow).map_err(solve_err)?;
    finite(&flow_sol.values, step, "velocity/pressure")?;

    let (k_c, n_c, mut rhs_c) = concentration_block(d, data, state, inp, t_next, step)?;
    let swim = d.ops.swim.mul_vec(&inp.c_lag);
    for (r, s) in rhs_c.iter_mut().zip(&swim) {
        *r += s;
    }
    let mut conc = ConstrainedSystem::new(k_c, rhs_c);
    impose_concentration(&mut conc, d, data, t_next, 0).map_err(solve_err)?;
    let conc_sol = solve(&conc).map_err(solve_err)?;
    finite(&conc_sol.values, step, "concentration")?;

    Ok(Solved {
        u: flow_sol.values[..nv].to_vec(),
        p: flow_sol.values[nv..].to_vec(),
        c: conc_sol.values,
        flow_residual: flow_sol.relative_residual,
        concentration_residual: conc_sol.relative_residual,
        velocity_convection: n_u,
        concentration_convection: n_c,
    })
}

fn solve_coupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
    inp: &StepInputs,
    t_next: f64,
    step: usize,
    first: bool,
) -> Result<Solved, SchemeError> {
    let (nv, np, nc) = (d.nv(), d.np(), d.nc());
    let n = nv + np + nc;
    let solve_err = |source| SchemeError::Solve { step, source };

    let (k_u, n_u, rhs_u) = momentum_block(d, data, state, inp, t_next, step)?;
    let (k_c, n_c, mut rhs_c) = concentration_block(d, data, state, inp, t_next, step)?;

    let mut b = TripletBuilder::with_capacity(
        n,
        n,
        k_u.nnz() + 2 * d.ops.divergence.nnz() + d.ops.buoyancy.coupling.nnz() + k_c.nnz() + d.ops.swim.nnz(),
    );
    b.add_matrix(&k_u, 0, 0, 1.0);
    b.add_transpose(&d.ops.divergence, 0, nv, -1.0);
    b.add_matrix(&d.ops.divergence, nv, 0, -1.0);
    // implicit buoyancy moves to the left-hand side
    b.add_matrix(&d.ops.buoyancy.coupling, 0, nv + np, -1.0);
    b.add_matrix(&k_c, nv + np, nv + np, 1.0);
    if first {
        // the first coupled step keeps the swimming term at the old level
        let swim = d.ops.swim.mul_vec(&state.c_curr);
        for (r, s) in rhs_c.iter_mut().zip(&swim) {
            *r += s;
        }
    } else {
        b.add_matrix(&d.ops.swim, nv + np, nv + np, -1.0);
    }
    let mut rhs = rhs_u;
    rhs.resize(nv + np, 0.0);
    rhs.extend_from_slice(&rhs_c);

    let mut sys = ConstrainedSystem::new(b.build(), rhs);
    impose_velocity(&mut sys, d, data, t_next).map_err(solve_err)?;
    sys.add_gauge(MeanConstraint::zero_mean(&d.ops.pressure_weights, nv));
    impose_concentration(&mut sys, d, data, t_next, nv + np).map_err(solve_err)?;
    condense_bubbles(&mut sys, d);
    let sol = solve(&sys).map_err(solve_err)?;
    finite(&sol.values, step, "coupled solution")?;

    Ok(Solved {
        u: sol.values[..nv].to_vec(),
        p: sol.values[nv..nv + np].to_vec(),
        c: sol.values[nv + np..].to_vec(),
        flow_residual: sol.relative_residual,
        concentration_residual: sol.relative_residual,
        velocity_convection: n_u,
        concentration_convection: n_c,
    })
}

fn advance(
    d: &Discretization,
    scheme: Scheme,
    data: &dyn ProblemData,
    state: &FieldState,
    first: bool,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    state.check(d)?;
    if first != (state.step == 0) {
        return Err(SchemeError::StateMismatch(format!(
            "{} step requested from level {}",
            if first { "first" } else { "BDF2" },
            state.step
        )));
    }
    let step = state.step + 1;
    let tau = d.params.time_step;
    let t_next = step as f64 * tau;
    let inp = inputs(state, first);
    let solved = match scheme {
        Scheme::Decoupled => solve_decoupled(d, data, state, &inp, t_next, step)?,
        Scheme::Coupled => solve_coupled(d, data, state, &inp, t_next, step, first)?,
    };

    let (velocity_telescope, concentration_telescope) = if first {
        (None, None)
    } else {
        (
            Some(telescope_residual(&d.ops.velocity_mass, &solved.u, &state.u_curr, &state.u_prev, tau)),
            Some(telescope_residual(&d.ops.concentration_mass, &solved.c, &state.c_curr, &state.c_prev, tau)),
        )
    };
    let velocity_convection = convection_ratio(&solved.velocity_convection, &solved.u);
    let concentration_convection = convection_ratio(&solved.concentration_convection, &solved.c);

    let next = FieldState {
        u_prev: state.u_curr.clone(),
        u_curr: solved.u,
        c_prev: state.c_curr.clone(),
        c_curr: solved.c,
        p_curr: solved.p,
        step,
        time: t_next,
    };
    let norms = d.norms(&next);
    if !norms.all_finite() {
        return Err(SchemeError::NonFinite { step, field: "norms" });
    }
    let diag = StepDiagnostics {
        step,
        time: t_next,
        norms,
        flow_residual: solved.flow_residual,
        concentration_residual: solved.concentration_residual,
        velocity_telescope,
        concentration_telescope,
        velocity_convection,
        concentration_convection,
        pressure_mean: d.pressure_mean(&next.p_curr),
        concentration_mean: d.concentration_mean(&next.c_curr),
    };
    Ok((next, diag))
}

/// Backward Euler step with every coupling lagged at level 0, solved as a
/// flow system followed by a concentration system.
pub fn first_step_decoupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state0: &FieldState,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    advance(d, Scheme::Decoupled, data, state0, true)
}

/// Backward Euler step with implicit buoyancy, solved monolithically.
pub fn first_step_coupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state0: &FieldState,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    advance(d, Scheme::Coupled, data, state0, true)
}

pub fn bdf2_step_decoupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    advance(d, Scheme::Decoupled, data, state, false)
}

/// BDF2 step with implicit buoyancy and swimming terms.
pub fn bdf2_step_coupled(
    d: &Discretization,
    data: &dyn ProblemData,
    state: &FieldState,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    advance(d, Scheme::Coupled, data, state, false)
}

/// One step of `scheme`, backward Euler from level 0 and BDF2 afterwards.
pub fn step(
    d: &Discretization,
    scheme: Scheme,
    data: &dyn ProblemData,
    state: &FieldState,
) -> Result<(FieldState, StepDiagnostics), SchemeError> {
    advance(d, scheme, data, state, state.step == 0)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub initial: FieldNorms,
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_state: FieldState,
    /// Viscosity-bound violations seen on lagged concentrations.
    pub warnings: Vec<String>,
}

/// Runs `T / tau` steps from `state0`.
pub fn run_simulation(
    d: &Discretization,
    scheme: Scheme,
    data: &dyn ProblemData,
    state0: FieldState,
) -> Result<RunSummary, SchemeError> {
    run_simulation_observed(d, scheme, data, state0, &mut |_, _| {})
}

/// As [`run_simulation`], calling `observe` with every new state.
pub fn run_simulation_observed(
    d: &Discretization,
    scheme: Scheme,
    data: &dyn ProblemData,
    state0: FieldState,
    observe: &mut dyn FnMut(&FieldState, &StepDiagnostics),
) -> Result<RunSummary, SchemeError> {
    let steps = d
        .params
        .step_count()
        .filter(|&n| n >= 2)
        .ok_or(SchemeError::StepCount { final_time: d.params.final_time, time_step: d.params.time_step })?;
    let initial = d.norms(&state0);
    let mut state = state0;
    let mut diagnostics = Vec::with_capacity(steps);
    let mut warnings = Vec::new();
    for _ in 0..steps {
        let lag = if state.step == 0 { state.c_curr.clone() } else { state.c_hat() };
        let lo = lag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(w) = d.params.viscosity_bound_warning(lo, hi) {
            if warnings.is_empty() {
                warnings.push(format!("step {}: {w}", state.step + 1));
            }
        }
        let (next, diag) = step(d, scheme, data, &state)?;
        observe(&next, &diag);
        diagnostics.push(diag);
        state = next;
    }
    Ok(RunSummary { initial, diagnostics, final_state: state, warnings })
}

/// Divergence-free velocity `(psi_y, -psi_x)` of
/// `psi = x^2 (1-x)^2 y^2 (1-y)^2`, zero on the boundary.
pub fn stream_velocity(x: [f64; 2]) -> [f64; 2] {
    let q = |s: f64| s * s * (1.0 - s) * (1.0 - s);
    let dq = |s: f64| 2.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    [q(x[0]) * dq(x[1]), -dq(x[0]) * q(x[1])]
}

/// Zero-mean initial concentration `cos(pi x) cos(pi y)`.
pub fn cosine_concentration(x: [f64; 2]) -> f64 {
    (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos()
}
