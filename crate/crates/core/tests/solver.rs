mod common;

use bioconv::assembly::{assemble_convection_skew, ModelParams};
use bioconv::fem::{interpolate_vector, QuadratureRule, DEFAULT_QUADRATURE_DEGREE};
use bioconv::linalg::{solve, ConstrainedSystem, MeanConstraint, SolveError, SparseMatrix, TripletBuilder};
use bioconv::mesh::Mesh;
use bioconv::schemes::{Discretization, Mode};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disc(n: usize, mode: Mode) -> Discretization {
    let mesh = Mesh::unit_square(n).unwrap();
    let params = ModelParams::default();
    Discretization::new(mesh, params, mode, QuadratureRule::with_degree(DEFAULT_QUADRATURE_DEGREE).unwrap()).unwrap()
}

/// `[M/tau + A + N(w), -D^T; -D, 0]` with a random right-hand side.
fn saddle(d: &Discretization, seed: u64) -> (SparseMatrix, Vec<f64>) {
    let (nv, np) = (d.nv(), d.np());
    let w = interpolate_vector(&d.mesh, &d.velocity, |x| [x[1] - 0.5, 0.3 - x[0] * x[0]]);
    let n = assemble_convection_skew(&d.mesh, &d.velocity, &d.quad, &d.velocity, &w).unwrap();
    let k =
        SparseMatrix::linear_combination(&[(4.0, &d.ops.velocity_mass), (1.0, &d.ops.velocity_stiffness), (1.0, &n)]);
    let mut b = TripletBuilder::new(nv + np, nv + np);
    b.add_matrix(&k, 0, 0, 1.0);
    b.add_transpose(&d.ops.divergence, 0, nv, -1.0);
    b.add_matrix(&d.ops.divergence, nv, 0, -1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rhs: Vec<f64> = (0..nv).map(|_| rng.random_range(-1.0..1.0)).collect();
    rhs.resize(nv + np, 0.0);
    (b.build(), rhs)
}

fn boundary_values(d: &Discretization) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for node in d.mesh.boundary_nodes() {
        let x = d.mesh.nodes()[node];
        out.push((d.velocity.node_dof(node, 0), x[0] * x[1]));
        out.push((d.velocity.node_dof(node, 1), -x[0] * x[1]));
    }
    out
}

fn constrained(d: &Discretization, a: &SparseMatrix, rhs: &[f64], condense: bool) -> ConstrainedSystem {
    let mut sys = ConstrainedSystem::new(a.clone(), rhs.to_vec());
    for (dof, g) in boundary_values(d) {
        sys.fix(dof, g).unwrap();
    }
    sys.add_gauge(MeanConstraint::zero_mean(&d.ops.pressure_weights, d.nv()));
    if condense {
        for t in 0..d.mesh.triangle_count() {
            sys.add_local_group((0..2).map(|k| d.velocity.bubble_dof(t, k).unwrap()).collect());
        }
    }
    sys
}

#[test]
fn saddle_point_matches_dense_bordered_oracle() {
    let d = disc(2, Mode::Manufactured);
    let (a, rhs) = saddle(&d, 11);
    let sol = solve(&constrained(&d, &a, &rhs, true)).unwrap();

    // oracle: identity rows for boundary values, pressure mean bordered by a multiplier
    let mut ad = dense(&a);
    let mut bd = rhs.clone();
    for (dof, g) in boundary_values(&d) {
        pin_row(&mut ad, &mut bd, dof, g);
    }
    let w: Vec<(usize, f64)> = d.ops.pressure_weights.iter().enumerate().map(|(i, &v)| (d.nv() + i, v)).collect();
    border(&mut ad, &mut bd, &w, 0.0);
    let x = dense_solve(ad, bd);
    let diff = max_diff_vec(&sol.values, &x[..d.nv() + d.np()]);
    assert!(diff < 1e-10, "{diff:e}");
    assert!(sol.relative_residual < 1e-12, "{:e}", sol.relative_residual);
}

#[test]
fn condensation_equals_uncondensed_solve() {
    for n in [2, 4, 8] {
        let d = disc(n, Mode::Manufactured);
        let (a, rhs) = saddle(&d, n as u64);
        let with = solve(&constrained(&d, &a, &rhs, true)).unwrap();
        let without = solve(&constrained(&d, &a, &rhs, false)).unwrap();
        let diff = max_diff_vec(&with.values, &without.values);
        assert!(diff < 1e-10, "n={n}: {diff:e}");
    }
}

#[test]
fn boundary_values_and_pressure_gauge_hold() {
    let d = disc(4, Mode::Manufactured);
    let (a, rhs) = saddle(&d, 3);
    let sol = solve(&constrained(&d, &a, &rhs, true)).unwrap();
    for (dof, g) in boundary_values(&d) {
        assert_eq!(sol.values[dof], g);
    }
    let mean = d.pressure_mean(&sol.values[d.nv()..]);
    assert!(mean.abs() < 1e-13, "{mean:e}");
}

#[test]
fn concentration_mean_constraint_matches_bordered_oracle() {
    let d = disc(4, Mode::Physical);
    let w = interpolate_vector(&d.mesh, &d.velocity, |x| [x[1], -x[0]]);
    let n = assemble_convection_skew(&d.mesh, &d.concentration, &d.quad, &d.velocity, &w).unwrap();
    let k = SparseMatrix::linear_combination(&[
        (2.0, &d.ops.concentration_mass),
        (1.0, &d.ops.diffusion),
        (1.0, &n),
        (-1.0, &d.ops.swim),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let rhs: Vec<f64> = (0..d.nc()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut sys = ConstrainedSystem::new(k.clone(), rhs.clone());
    sys.add_mean_constraint(MeanConstraint::zero_mean(&d.ops.concentration_weights, 0));
    let sol = solve(&sys).unwrap();

    let mut ad = dense(&k);
    let mut bd = rhs;
    let wts: Vec<(usize, f64)> = d.ops.concentration_weights.iter().copied().enumerate().collect();
    border(&mut ad, &mut bd, &wts, 0.0);
    let x = dense_solve(ad, bd);
    assert!(max_diff_vec(&sol.values, &x[..d.nc()]) < 1e-10);
    assert!((sol.multipliers[0] - x[d.nc()]).abs() < 1e-10);
    assert!(d.concentration_mean(&sol.values).abs() < 1e-13);
}

#[test]
fn condensed_group_may_not_carry_boundary_values() {
    let d = disc(2, Mode::Manufactured);
    let (a, rhs) = saddle(&d, 1);
    let mut sys = constrained(&d, &a, &rhs, false);
    sys.add_local_group(vec![d.velocity.node_dof(0, 0)]);
    assert!(matches!(solve(&sys), Err(SolveError::Condensation { .. })));
}
