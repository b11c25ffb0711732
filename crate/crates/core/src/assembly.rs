//! Global assembly of the bilinear, trilinear and load terms of the two
//! time-stepping schemes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fem::{vector_at, Bary, DofMap, ElementMap, QuadratureRule, Shapes};
use crate::linalg::{SparseMatrix, TripletBuilder};
use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("non-positive weight {value} at a quadrature point of element {element}")]
    NonPositiveWeight { element: usize, value: f64 },
    #[error("space mismatch: {0}")]
    SpaceMismatch(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter {name} = {value} is invalid: {reason}")]
    Invalid { name: &'static str, value: f64, reason: &'static str },
    #[error("unrecognised viscosity law '{0}' (expected const:<v>, affine:<a>,<b> or exp)")]
    ViscosityLaw(String),
    #[error("unrecognised viscous form '{0}' (expected gradient or symmetric)")]
    ViscousForm(String),
}

/// Concentration-dependent kinematic viscosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViscosityLaw {
    Constant(f64),
    /// `a + b c`
    Affine {
        a: f64,
        b: f64,
    },
    /// `exp(c)`
    Exponential,
}

impl ViscosityLaw {
    pub fn eval(&self, c: f64) -> f64 {
        match *self {
            ViscosityLaw::Constant(v) => v,
            ViscosityLaw::Affine { a, b } => a + b * c,
            ViscosityLaw::Exponential => c.exp(),
        }
    }

    pub fn derivative(&self, c: f64) -> f64 {
        match *self {
            ViscosityLaw::Constant(_) => 0.0,
            ViscosityLaw::Affine { b, .. } => b,
            ViscosityLaw::Exponential => c.exp(),
        }
    }
}

impl fmt::Display for ViscosityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViscosityLaw::Constant(v) => write!(f, "const:{v}"),
            ViscosityLaw::Affine { a, b } => write!(f, "affine:{a},{b}"),
            ViscosityLaw::Exponential => write!(f, "exp"),
        }
    }
}

impl FromStr for ViscosityLaw {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParamError::ViscosityLaw(s.to_string());
        let s = s.trim();
        if s == "exp" {
            return Ok(ViscosityLaw::Exponential);
        }
        let (kind, args) = s.split_once(':').ok_or_else(err)?;
        let nums: Vec<f64> =
            args.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err())?;
        match (kind, nums.as_slice()) {
            ("const", [v]) => Ok(ViscosityLaw::Constant(*v)),
            ("affine", [a, b]) => Ok(ViscosityLaw::Affine { a: *a, b: *b }),
            _ => Err(err()),
        }
    }
}

/// Shape of the viscous term: `nu grad u : grad v` or `nu D(u) : D(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViscousForm {
    #[default]
    Gradient,
    Symmetric,
}

impl fmt::Display for ViscousForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViscousForm::Gradient => "gradient",
            ViscousForm::Symmetric => "symmetric",
        })
    }
}

impl FromStr for ViscousForm {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gradient" => Ok(ViscousForm::Gradient),
            "symmetric" => Ok(ViscousForm::Symmetric),
            other => Err(ParamError::ViscousForm(other.to_string())),
        }
    }
}

/// Physical and scheme constants.
///
/// The concentration unknown is the shifted field `c - alpha`; viscosity is
/// evaluated at `c + alpha`. The viscosity should satisfy
/// `1/k <= nu <= k` with `|nu'| <= beta` on the range of concentrations
/// visited by a run; the bound is checked as a diagnostic only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Diffusivity of the micro-organisms.
    pub theta: f64,
    /// Average upward swimming speed.
    pub swim_speed: f64,
    /// Relative density difference.
    pub gamma: f64,
    /// Gravitational acceleration.
    pub gravity: f64,
    /// Mean concentration.
    pub alpha: f64,
    pub viscosity: ViscosityLaw,
    pub viscosity_bound: f64,
    pub viscous_form: ViscousForm,
    pub final_time: f64,
    pub time_step: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            swim_speed: 1.0,
            gamma: 1.0,
            gravity: 1.0,
            alpha: 0.0,
            viscosity: ViscosityLaw::Constant(1.0),
            viscosity_bound: 10.0,
            viscous_form: ViscousForm::Gradient,
            final_time: 1.0,
            time_step: 1.0 / 16.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let finite = [
            ("theta", self.theta),
            ("U", self.swim_speed),
            ("gamma", self.gamma),
            ("g", self.gravity),
            ("alpha", self.alpha),
            ("k", self.viscosity_bound),
            ("T", self.final_time),
            ("tau", self.time_step),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(ParamError::Invalid { name, value, reason: "must be finite" });
            }
        }
        if self.theta <= 0.0 {
            return Err(ParamError::Invalid { name: "theta", value: self.theta, reason: "must be positive" });
        }
        if self.time_step <= 0.0 {
            return Err(ParamError::Invalid { name: "tau", value: self.time_step, reason: "must be positive" });
        }
        if self.final_time < self.time_step {
            return Err(ParamError::Invalid { name: "T", value: self.final_time, reason: "must be at least tau" });
        }
        for (name, value) in [("U", self.swim_speed), ("gamma", self.gamma), ("g", self.gravity)] {
            if value < 0.0 {
                return Err(ParamError::Invalid { name, value, reason: "must be nonnegative" });
            }
        }
        if self.viscosity_bound < 1.0 {
            return Err(ParamError::Invalid { name: "k", value: self.viscosity_bound, reason: "must be at least 1" });
        }
        Ok(())
    }

    /// Number of steps `T / tau`, if it is a whole number.
    pub fn step_count(&self) -> Option<usize> {
        let n = (self.final_time / self.time_step).round();
        let rel = ((n * self.time_step) - self.final_time).abs() / self.final_time;
        (n >= 1.0 && rel < 1e-9).then_some(n as usize)
    }

    /// Warning text when the viscosity leaves `[1/k, k]` for shifted
    /// concentrations in `[c_min, c_max]`.
    pub fn viscosity_bound_warning(&self, c_min: f64, c_max: f64) -> Option<String> {
        let k = self.viscosity_bound;
        // all supported laws are monotone, so the extremes sit at the ends
        let a = self.viscosity.eval(c_min + self.alpha);
        let b = self.viscosity.eval(c_max + self.alpha);
        let (lo, hi) = (a.min(b), a.max(b));
        (lo < 1.0 / k || hi > k).then(|| {
            format!("viscosity range [{lo:.4e}, {hi:.4e}] leaves the admissible band [{:.4e}, {k:.4e}]", 1.0 / k)
        })
    }
}

fn check_scalar(space: &DofMap) -> Result<(), AssemblyError> {
    if space.kind().is_vector() {
        return Err(AssemblyError::SpaceMismatch("expected a scalar space"));
    }
    Ok(())
}

fn check_vector(space: &DofMap) -> Result<(), AssemblyError> {
    if !space.kind().is_vector() {
        return Err(AssemblyError::SpaceMismatch("expected a vector space"));
    }
    Ok(())
}

/// Visits every quadrature point with the element map, the barycentric
/// point, `weight * area` and the tabulated shapes.
fn for_each_point(
    mesh: &Mesh,
    quad: &QuadratureRule,
    with_bubble: bool,
    mut f: impl FnMut(usize, &ElementMap, Bary, f64, &Shapes),
) {
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        for (bary, w) in quad.iter() {
            let shapes = Shapes::eval(&map, bary, with_bubble);
            f(t, &map, bary, w * area, &shapes);
        }
    }
}

/// Scatters a dense local scalar-function matrix into a (possibly vector)
/// space, replicating it on the diagonal component blocks.
fn scatter_blockwise(b: &mut TripletBuilder, cell: &[usize], local: &[[f64; 4]; 4], count: usize, comps: usize) {
    for a in 0..count {
        for c in 0..count {
            let v = local[a][c];
            for k in 0..comps {
                b.push(cell[comps * a + k], cell[comps * c + k], v);
            }
        }
    }
}

/// `M_ij = (phi_j, phi_i)`
pub fn assemble_mass(mesh: &Mesh, space: &DofMap, quad: &QuadratureRule) -> SparseMatrix {
    let n = space.n_dofs();
    let comps = space.kind().components();
    let mut b = TripletBuilder::with_capacity(n, n, space.dofs_per_cell().pow(2) * mesh.triangle_count());
    let mut local = [[0.0; 4]; 4];
    let mut current = usize::MAX;
    let mut count = 0;
    for_each_point(mesh, quad, space.kind().has_bubble(), |t, _, _, w, s| {
        if t != current {
            if current != usize::MAX {
                scatter_blockwise(&mut b, space.cell(current), &local, count, comps);
            }
            local = [[0.0; 4]; 4];
            current = t;
            count = s.count;
        }
        for a in 0..s.count {
            for c in 0..s.count {
                local[a][c] += w * s.values[a] * s.values[c];
            }
        }
    });
    if current != usize::MAX {
        scatter_blockwise(&mut b, space.cell(current), &local, count, comps);
    }
    b.build()
}

/// `A_ij = (w grad phi_j, grad phi_i)`, or `(w D(phi_j), D(phi_i))` for a
/// vector space with the symmetric form. `weight` receives the element, the
/// barycentric point and the physical point.
pub fn assemble_stiffness_weighted(
    mesh: &Mesh,
    space: &DofMap,
    quad: &QuadratureRule,
    form: ViscousForm,
    weight: impl Fn(usize, Bary, [f64; 2]) -> f64,
) -> Result<SparseMatrix, AssemblyError> {
    let n = space.n_dofs();
    let comps = space.kind().components();
    let nloc = space.dofs_per_cell();
    let mut b = TripletBuilder::with_capacity(n, n, nloc * nloc * mesh.triangle_count());
    let mut local = vec![0.0; nloc * nloc];
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, qw) in quad.iter() {
            let x = map.point(bary);
            let w = weight(t, bary, x);
            if w <= 0.0 || !w.is_finite() {
                return Err(AssemblyError::NonPositiveWeight { element: t, value: w });
            }
            let s = Shapes::eval(&map, bary, space.kind().has_bubble());
            let f = qw * area * w;
            for a in 0..s.count {
                for c in 0..s.count {
                    let ga = s.grads[a];
                    let gc = s.grads[c];
                    let dot = ga[0] * gc[0] + ga[1] * gc[1];
                    for i in 0..comps {
                        for j in 0..comps {
                            let v = match (comps, form) {
                                (1, _) | (_, ViscousForm::Gradient) => {
                                    if i == j {
                                        dot
                                    } else {
                                        continue;
                                    }
                                }
                                (_, ViscousForm::Symmetric) => {
                                    // D(phi_a e_i) : D(phi_c e_j)
                                    let delta = if i == j { dot } else { 0.0 };
                                    0.5 * (delta + ga[j] * gc[i])
                                }
                            };
                            local[(comps * a + i) * nloc + comps * c + j] += f * v;
                        }
                    }
                }
            }
        }
        let cell = space.cell(t);
        for r in 0..nloc {
            for c in 0..nloc {
                let v = local[r * nloc + c];
                if v != 0.0 {
                    b.push(cell[r], cell[c], v);
                }
            }
        }
    }
    Ok(b.build())
}

/// Skew-symmetric convection operator for a lagged wind `w` from the
/// velocity space: `N_ij = 1/2 (w . grad phi_j, phi_i) - 1/2 (w . grad phi_i, phi_j)`.
///
/// Works for both the vector form (blockwise per component) and the scalar
/// form. Each global pair `(i, j)`, `(j, i)` receives exactly negated
/// contributions, so `N + N^T` vanishes in floating point.
pub fn assemble_convection_skew(
    mesh: &Mesh,
    space: &DofMap,
    quad: &QuadratureRule,
    velocity: &DofMap,
    wind: &[f64],
) -> Result<SparseMatrix, AssemblyError> {
    check_vector(velocity)?;
    if wind.len() != velocity.n_dofs() {
        return Err(AssemblyError::SpaceMismatch("wind length differs from the velocity space"));
    }
    let n = space.n_dofs();
    let comps = space.kind().components();
    let bubble = space.kind().has_bubble();
    let mut b = TripletBuilder::with_capacity(n, n, space.dofs_per_cell().pow(2) * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        let vcell = velocity.cell(t);
        // k[a][c] = (w . grad phi_c, phi_a)
        let mut k = [[0.0; 4]; 4];
        let mut count = 0;
        for (bary, qw) in quad.iter() {
            let vs = Shapes::eval(&map, bary, true);
            let wv = vector_at(&vs, vcell, wind).value;
            let s = if bubble { vs } else { Shapes::eval(&map, bary, false) };
            count = s.count;
            let f = qw * area;
            for a in 0..s.count {
                for c in 0..s.count {
                    let adv = wv[0] * s.grads[c][0] + wv[1] * s.grads[c][1];
                    k[a][c] += f * adv * s.values[a];
                }
            }
        }
        let cell = space.cell(t);
        for a in 0..count {
            for c in 0..count {
                let v = 0.5 * (k[a][c] - k[c][a]);
                for i in 0..comps {
                    b.push(cell[comps * a + i], cell[comps * c + i], v);
                }
            }
        }
    }
    Ok(b.build())
}

/// `D_qj = (q, div phi_j)`, pressure rows by velocity columns.
pub fn assemble_div_coupling(
    mesh: &Mesh,
    velocity: &DofMap,
    pressure: &DofMap,
    quad: &QuadratureRule,
) -> Result<SparseMatrix, AssemblyError> {
    check_vector(velocity)?;
    check_scalar(pressure)?;
    let mut b = TripletBuilder::with_capacity(pressure.n_dofs(), velocity.n_dofs(), 24 * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        let mut local = [[[0.0; 2]; 4]; 3];
        for (bary, qw) in quad.iter() {
            let vs = Shapes::eval(&map, bary, true);
            for q in 0..3 {
                for a in 0..4 {
                    for j in 0..2 {
                        local[q][a][j] += qw * area * vs.values[q] * vs.grads[a][j];
                    }
                }
            }
        }
        let pcell = pressure.cell(t);
        let vcell = velocity.cell(t);
        for q in 0..3 {
            for a in 0..4 {
                for j in 0..2 {
                    b.push(pcell[q], vcell[2 * a + j], local[q][a][j]);
                }
            }
        }
    }
    Ok(b.build())
}

/// Swimming operator `S_ij = U (phi_j, d phi_i / d x2)` and the constant
/// right-hand side `U alpha (1, d phi_i / d x2)`.
pub fn assemble_swim(
    mesh: &Mesh,
    scalar: &DofMap,
    quad: &QuadratureRule,
    params: &ModelParams,
) -> Result<(SparseMatrix, Vec<f64>), AssemblyError> {
    check_scalar(scalar)?;
    let n = scalar.n_dofs();
    let u = params.swim_speed;
    let mut b = TripletBuilder::with_capacity(n, n, 9 * mesh.triangle_count());
    let mut rhs = vec![0.0; n];
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        let cell = scalar.cell(t);
        let mut local = [[0.0; 3]; 3];
        for (bary, qw) in quad.iter() {
            let s = Shapes::eval(&map, bary, false);
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += qw * area * s.values[j] * s.grads[i][1];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                b.push(cell[i], cell[j], u * local[i][j]);
            }
            // (1, d phi_i/dy) is the row sum of (phi_j, d phi_i/dy)
            rhs[cell[i]] += u * params.alpha * local[i].iter().sum::<f64>();
        }
    }
    Ok((b.build(), rhs))
}

/// Buoyancy `-g((1 + gamma c) i2, v)` split into its parts.
#[derive(Debug, Clone)]
pub struct Buoyancy {
    /// `-g gamma G` with `G_ij = (phi_j, phi_i . i2)`; velocity rows,
    /// concentration columns.
    pub coupling: SparseMatrix,
    /// `-g (i2, phi_i)`
    pub constant: Vec<f64>,
}

pub fn assemble_buoyancy(
    mesh: &Mesh,
    velocity: &DofMap,
    scalar: &DofMap,
    quad: &QuadratureRule,
    params: &ModelParams,
) -> Result<Buoyancy, AssemblyError> {
    check_vector(velocity)?;
    check_scalar(scalar)?;
    let g = params.gravity;
    let scale = -g * params.gamma;
    let mut b = TripletBuilder::with_capacity(velocity.n_dofs(), scalar.n_dofs(), 12 * mesh.triangle_count());
    let mut constant = vec![0.0; velocity.n_dofs()];
    for t in 0..mesh.triangle_count() {
        let map = ElementMap::of(mesh, t);
        let area = map.area();
        let mut local = [[0.0; 3]; 4];
        let mut ones = [0.0; 4];
        for (bary, qw) in quad.iter() {
            let s = Shapes::eval(&map, bary, true);
            for a in 0..4 {
                ones[a] += qw * area * s.values[a];
                for j in 0..3 {
                    local[a][j] += qw * area * s.values[a] * s.values[j];
                }
            }
        }
        let vcell = velocity.cell(t);
        let scell = scalar.cell(t);
        for a in 0..4 {
            let row = vcell[2 * a + 1];
            constant[row] += -g * ones[a];
            for j in 0..3 {
                b.push(row, scell[j], scale * local[a][j]);
            }
        }
    }
    Ok(Buoyancy { coupling: b.build(), constant })
}

/// `L_i = (f, phi_i)` for a vector load.
pub fn assemble_load_vector(
    mesh: &Mesh,
    velocity: &DofMap,
    quad: &QuadratureRule,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Vec<f64>, AssemblyError> {
    check_vector(velocity)?;
    let mut out = vec![0.0; velocity.n_dofs()];
    for_each_point(mesh, quad, velocity.kind().has_bubble(), |t, map, bary, w, s| {
        let fv = f(map.point(bary));
        let cell = velocity.cell(t);
        for a in 0..s.count {
            out[cell[2 * a]] += w * fv[0] * s.values[a];
            out[cell[2 * a + 1]] += w * fv[1] * s.values[a];
        }
    });
    Ok(out)
}

/// `L_i = (f, phi_i)` for a scalar load.
pub fn assemble_load_scalar(
    mesh: &Mesh,
    scalar: &DofMap,
    quad: &QuadratureRule,
    f: impl Fn([f64; 2]) -> f64,
) -> Result<Vec<f64>, AssemblyError> {
    check_scalar(scalar)?;
    let mut out = vec![0.0; scalar.n_dofs()];
    for_each_point(mesh, quad, false, |t, map, bary, w, s| {
        let fv = f(map.point(bary));
        let cell = scalar.cell(t);
        for a in 0..3 {
            out[cell[a]] += w * fv * s.values[a];
        }
    });
    Ok(out)
}

/// `w_i = (1, phi_i)` of a scalar P1 space; the weights of a mean constraint.
pub fn integral_weights(mesh: &Mesh, scalar: &DofMap, quad: &QuadratureRule) -> Result<Vec<f64>, AssemblyError> {
    assemble_load_scalar(mesh, scalar, quad, |_| 1.0)
}

/// Value of a P1 field at a barycentric point of element `t`.
#[inline]
pub fn p1_value(mesh: &Mesh, field: &[f64], t: usize, bary: Bary) -> f64 {
    let tri = mesh.triangles()[t];
    bary[0] * field[tri[0]] + bary[1] * field[tri[1]] + bary[2] * field[tri[2]]
}

/// Viscous operator `nu(c + alpha)` for a lagged P1 concentration.
pub fn assemble_viscous(
    mesh: &Mesh,
    velocity: &DofMap,
    quad: &QuadratureRule,
    params: &ModelParams,
    concentration: &[f64],
) -> Result<SparseMatrix, AssemblyError> {
    check_vector(velocity)?;
    let law = params.viscosity;
    let alpha = params.alpha;
    assemble_stiffness_weighted(mesh, velocity, quad, params.viscous_form, |t, bary, _| {
        law.eval(p1_value(mesh, concentration, t, bary) + alpha)
    })
}

/// Operators that stay fixed over a run.
#[derive(Debug, Clone)]
pub struct DiscreteOperatorSet {
    pub velocity_mass: SparseMatrix,
    pub concentration_mass: SparseMatrix,
    /// `theta (grad phi_j, grad phi_i)`
    pub diffusion: SparseMatrix,
    /// Unweighted velocity stiffness, used for H1 norms.
    pub velocity_stiffness: SparseMatrix,
    /// Unweighted concentration stiffness, used for H1 norms.
    pub concentration_stiffness: SparseMatrix,
    pub divergence: SparseMatrix,
    pub swim: SparseMatrix,
    pub swim_rhs: Vec<f64>,
    pub buoyancy: Buoyancy,
    pub pressure_mass: SparseMatrix,
    pub pressure_weights: Vec<f64>,
    pub concentration_weights: Vec<f64>,
}

impl DiscreteOperatorSet {
    pub fn assemble(
        mesh: &Mesh,
        velocity: &DofMap,
        pressure: &DofMap,
        concentration: &DofMap,
        quad: &QuadratureRule,
        params: &ModelParams,
    ) -> Result<Self, AssemblyError> {
        check_vector(velocity)?;
        check_scalar(pressure)?;
        check_scalar(concentration)?;
        let concentration_stiffness =
            assemble_stiffness_weighted(mesh, concentration, quad, ViscousForm::Gradient, |_, _, _| 1.0)?;
        let (swim, swim_rhs) = assemble_swim(mesh, concentration, quad, params)?;
        Ok(Self {
            velocity_mass: assemble_mass(mesh, velocity, quad),
            concentration_mass: assemble_mass(mesh, concentration, quad),
            diffusion: concentration_stiffness.scaled(params.theta),
            velocity_stiffness: assemble_stiffness_weighted(mesh, velocity, quad, ViscousForm::Gradient, |_, _, _| {
                1.0
            })?,
            concentration_stiffness,
            divergence: assemble_div_coupling(mesh, velocity, pressure, quad)?,
            swim,
            swim_rhs,
            buoyancy: assemble_buoyancy(mesh, velocity, concentration, quad, params)?,
            pressure_mass: assemble_mass(mesh, pressure, quad),
            pressure_weights: integral_weights(mesh, pressure, quad)?,
            concentration_weights: integral_weights(mesh, concentration, quad)?,
        })
    }
}
