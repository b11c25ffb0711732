//! Closed-form exact solution, matching sources and discretization errors.
//!
//! ```text
//! u = e^{-t} (P(y), -P(x)),  P(s) = 2s^3 - 3s^2 + s = s(2s - 1)(s - 1)
//! p = e^{-t} (2x - 1)(2y - 1)
//! c = e^{-t} sin(pi x) sin(pi y)
//! ```
//!
//! `c` is the shifted concentration, so the viscosity is `nu(c + alpha)`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::assembly::{ModelParams, ViscousForm};
use crate::fem::{scalar_at, vector_at, ElementMap, Shapes};
use crate::schemes::{Discretization, FieldNorms, FieldState, ProblemData};

fn poly(s: f64) -> f64 {
    s * (2.0 * s - 1.0) * (s - 1.0)
}

fn poly_d(s: f64) -> f64 {
    6.0 * s * s - 6.0 * s + 1.0
}

fn poly_dd(s: f64) -> f64 {
    12.0 * s - 6.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub params: ModelParams,
}

impl ExactSolution {
    pub fn new(params: ModelParams) -> Self {
        Self { params }
    }

    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [e * poly(x[1]), -e * poly(x[0])]
    }

    /// `g[i][j] = d u_i / d x_j`
    pub fn velocity_gradient(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let e = (-t).exp();
        [[0.0, e * poly_d(x[1])], [-e * poly_d(x[0]), 0.0]]
    }

    pub fn velocity_laplacian(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [e * poly_dd(x[1]), -e * poly_dd(x[0])]
    }

    pub fn pressure(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * (2.0 * x[0] - 1.0) * (2.0 * x[1] - 1.0)
    }

    pub fn pressure_gradient(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [2.0 * e * (2.0 * x[1] - 1.0), 2.0 * e * (2.0 * x[0] - 1.0)]
    }

    pub fn concentration(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    pub fn concentration_gradient(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp() * PI;
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        [e * cx * sy, e * sx * cy]
    }

    pub fn concentration_laplacian(&self, x: [f64; 2], t: f64) -> f64 {
        -2.0 * PI * PI * self.concentration(x, t)
    }

    /// `u_t - div(nu grad u) + (u . grad) u + grad p + g (1 + gamma c) i2`,
    /// or with `nu D(u)` under the symmetric viscous form.
    pub fn momentum_forcing(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let p = &self.params;
        let u = self.velocity(x, t);
        let gu = self.velocity_gradient(x, t);
        let lap = self.velocity_laplacian(x, t);
        let gp = self.pressure_gradient(x, t);
        let c = self.concentration(x, t);
        let gc = self.concentration_gradient(x, t);
        let nu = p.viscosity.eval(c + p.alpha);
        let dnu = p.viscosity.derivative(c + p.alpha);
        let gnu = [dnu * gc[0], dnu * gc[1]];

        let mut f = [0.0; 2];
        for i in 0..2 {
            let viscous = match p.viscous_form {
                ViscousForm::Gradient => nu * lap[i] + gnu[0] * gu[i][0] + gnu[1] * gu[i][1],
                ViscousForm::Symmetric => {
                    // div u = 0, so div D(u) = lap u / 2
                    let d = |a: usize, b: usize| 0.5 * (gu[a][b] + gu[b][a]);
                    0.5 * nu * lap[i] + d(i, 0) * gnu[0] + d(i, 1) * gnu[1]
                }
            };
            let advection = u[0] * gu[i][0] + u[1] * gu[i][1];
            f[i] = -u[i] - viscous + advection + gp[i];
        }
        f[1] += p.gravity * (1.0 + p.gamma * c);
        f
    }

    /// `c_t - theta lap c + u . grad c + U dc/dy`
    pub fn concentration_forcing(&self, x: [f64; 2], t: f64) -> f64 {
        let p = &self.params;
        let c = self.concentration(x, t);
        let gc = self.concentration_gradient(x, t);
        let u = self.velocity(x, t);
        -c - p.theta * self.concentration_laplacian(x, t) + u[0] * gc[0] + u[1] * gc[1] + p.swim_speed * gc[1]
    }
}

impl ProblemData for ExactSolution {
    fn momentum_source(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.momentum_forcing(x, t)
    }
    fn concentration_source(&self, x: [f64; 2], t: f64) -> f64 {
        self.concentration_forcing(x, t)
    }
    fn velocity_trace(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.velocity(x, t)
    }
    fn concentration_trace(&self, x: [f64; 2], t: f64) -> f64 {
        self.concentration(x, t)
    }
}

/// Errors of one discrete state against the exact fields. H1 entries are
/// full norms, the pressure error is taken after removing the discrete mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldErrors {
    pub velocity_l2: f64,
    pub velocity_h1: f64,
    pub concentration_l2: f64,
    pub concentration_h1: f64,
    pub pressure_l2: f64,
}

impl FieldErrors {
    pub fn values(&self) -> [f64; 5] {
        [self.velocity_l2, self.velocity_h1, self.concentration_l2, self.concentration_h1, self.pressure_l2]
    }

    fn divided(&self, by: &FieldErrors) -> FieldErrors {
        FieldErrors {
            velocity_l2: self.velocity_l2 / by.velocity_l2,
            velocity_h1: self.velocity_h1 / by.velocity_h1,
            concentration_l2: self.concentration_l2 / by.concentration_l2,
            concentration_h1: self.concentration_h1 / by.concentration_h1,
            pressure_l2: self.pressure_l2 / by.pressure_l2,
        }
    }
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    /// `1/n`
    pub h: f64,
    pub tau: f64,
    pub subdivisions: usize,
    pub errors: FieldErrors,
    pub relative: FieldErrors,
    pub discrete: FieldNorms,
    /// `sqrt(tau sum_n |e^n|^2)` of the velocity, concentration and pressure
    /// L2 errors over all time levels.
    pub l2_in_time: [f64; 3],
}

/// Quadrature errors of `state` against the exact fields at time `t`.
pub fn error_norms(d: &Discretization, state: &FieldState, exact: &ExactSolution, t: f64) -> FieldErrors {
    let p_mean = d.pressure_mean(&state.p_curr) / d.mesh.measure();
    let mut acc = [0.0; 5];
    for e in 0..d.mesh.triangle_count() {
        let map = ElementMap::of(&d.mesh, e);
        let area = map.area();
        for (bary, w) in d.quad.iter() {
            let x = map.point(bary);
            let vs = Shapes::eval(&map, bary, true);
            let uh = vector_at(&vs, d.velocity.cell(e), &state.u_curr);
            let ss = Shapes::eval(&map, bary, false);
            let ch = scalar_at(&ss, d.concentration.cell(e), &state.c_curr);
            let ph = scalar_at(&ss, d.pressure.cell(e), &state.p_curr);
            let wa = w * area;

            let u = exact.velocity(x, t);
            let gu = exact.velocity_gradient(x, t);
            for i in 0..2 {
                acc[0] += wa * (u[i] - uh.value[i]).powi(2);
                for j in 0..2 {
                    acc[1] += wa * (gu[i][j] - uh.gradient[i][j]).powi(2);
                }
            }
            let c = exact.concentration(x, t);
            let gc = exact.concentration_gradient(x, t);
            acc[2] += wa * (c - ch.value).powi(2);
            acc[3] += wa * ((gc[0] - ch.gradient[0]).powi(2) + (gc[1] - ch.gradient[1]).powi(2));
            acc[4] += wa * (exact.pressure(x, t) - (ph.value - p_mean)).powi(2);
        }
    }
    FieldErrors {
        velocity_l2: acc[0].sqrt(),
        velocity_h1: (acc[0] + acc[1]).sqrt(),
        concentration_l2: acc[2].sqrt(),
        concentration_h1: (acc[2] + acc[3]).sqrt(),
        pressure_l2: acc[4].sqrt(),
    }
}

/// Quadrature norms of the exact fields at time `t`.
pub fn exact_norms(d: &Discretization, exact: &ExactSolution, t: f64) -> FieldErrors {
    let zero = FieldState {
        u_prev: Vec::new(),
        u_curr: vec![0.0; d.nv()],
        c_prev: Vec::new(),
        c_curr: vec![0.0; d.nc()],
        p_curr: vec![0.0; d.np()],
        step: 0,
        time: t,
    };
    error_norms(d, &zero, exact, t)
}

/// Errors relative to the exact norms.
pub fn relative_errors(errors: &FieldErrors, exact: &FieldErrors) -> FieldErrors {
    errors.divided(exact)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("error value {value} in row {row} is not positive and finite")]
    NonPositive { row: usize, value: f64 },
    #[error("mesh sizes {coarse} and {fine} in rows {row}/{next} do not halve", next = row + 1)]
    NotHalving { row: usize, coarse: f64, fine: f64 },
}

/// `log2(e_{2h} / e_h)` between consecutive rows; the first entry is `None`.
pub fn compute_rates(h: &[f64], errors: &[f64]) -> Result<Vec<Option<f64>>, RateError> {
    for (row, &value) in errors.iter().enumerate() {
        if value <= 0.0 || !value.is_finite() {
            return Err(RateError::NonPositive { row, value });
        }
    }
    for row in 0..h.len().saturating_sub(1) {
        let (coarse, fine) = (h[row], h[row + 1]);
        if ((coarse / fine) - 2.0).abs() > 1e-12 {
            return Err(RateError::NotHalving { row, coarse, fine });
        }
    }
    let mut out = vec![None];
    for k in 1..errors.len() {
        out.push(Some((errors[k - 1] / errors[k]).log2()));
    }
    out.truncate(errors.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_from_table_values() {
        let r = compute_rates(&[0.125, 0.0625], &[0.0022186, 0.0005575]).unwrap();
        assert_eq!(r[0], None);
        assert_eq!(format!("{:.2}", r[1].unwrap()), "1.99");
        let r = compute_rates(&[0.5, 0.25, 0.125], &[1.0, 0.25, 0.25]).unwrap();
        assert_eq!(r, vec![None, Some(2.0), Some(0.0)]);
    }

    #[test]
    fn rates_reject_bad_input() {
        assert!(matches!(compute_rates(&[0.5, 0.25], &[1.0, 0.0]), Err(RateError::NonPositive { row: 1, .. })));
        assert!(matches!(compute_rates(&[0.5, 0.25], &[-1.0, 1.0]), Err(RateError::NonPositive { row: 0, .. })));
        assert!(matches!(compute_rates(&[0.25, 1.0 / 7.0], &[1.0, 0.5]), Err(RateError::NotHalving { row: 0, .. })));
        assert_eq!(compute_rates(&[0.25], &[1.0]).unwrap(), vec![None]);
    }

    #[test]
    fn constant_viscosity_forcing_at_center() {
        // u = e^0 (P(1/2), -P(1/2)) = 0, grad u = (P'(1/2)) = -1/2 off-diagonal,
        // lap u = 0 at the center; grad p = 0, c = 1
        let p = ModelParams { gravity: 0.0, ..Default::default() };
        let e = ExactSolution::new(p);
        let f = e.momentum_forcing([0.5, 0.5], 0.0);
        assert!(f[0].abs() < 1e-15 && f[1].abs() < 1e-15, "{f:?}");
        let p = ModelParams { gravity: 2.0, gamma: 0.5, ..Default::default() };
        let f = ExactSolution::new(p).momentum_forcing([0.5, 0.5], 0.0);
        assert!((f[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn uncoupled_concentration_source() {
        let p = ModelParams { gravity: 0.0, gamma: 0.0, swim_speed: 0.0, ..Default::default() };
        let e = ExactSolution::new(p);
        for x in [[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]] {
            let t = 0.4;
            let c = e.concentration(x, t);
            let gc = e.concentration_gradient(x, t);
            let u = e.velocity(x, t);
            let expected = -c + 2.0 * PI * PI * c + u[0] * gc[0] + u[1] * gc[1];
            assert!((e.concentration_forcing(x, t) - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_velocity_matches_factored_form() {
        let e = ExactSolution::new(ModelParams::default());
        let [x, y, t] = [0.3, 0.8, 0.25];
        let u = e.velocity([x, y], t);
        let ex = (-t).exp();
        assert!((u[0] - y * ex * (2.0 * y - 1.0) * (y - 1.0)).abs() < 1e-15);
        assert!((u[1] + x * ex * (2.0 * x - 1.0) * (x - 1.0)).abs() < 1e-15);
    }
}
