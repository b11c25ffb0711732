mod common;

use bioconv::assembly::{ModelParams, ViscosityLaw};
use bioconv::fem::QuadratureRule;
use bioconv::manufactured::ExactSolution;
use bioconv::mesh::Mesh;
use bioconv::schemes::*;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// both sides integrate the non-polynomial forcing well past round-off
const LIBRARY_DEGREE: usize = 20;
const ORACLE_DEGREE: usize = 24;

fn params() -> ModelParams {
    ModelParams {
        theta: 0.7,
        swim_speed: 0.8,
        gamma: 0.6,
        gravity: 1.3,
        alpha: 0.2,
        viscosity: ViscosityLaw::Affine { a: 1.0, b: 0.1 },
        time_step: 0.125,
        ..Default::default()
    }
}

fn disc(n: usize, mode: Mode, p: ModelParams) -> Discretization {
    let quad = QuadratureRule::with_degree(LIBRARY_DEGREE).unwrap();
    Discretization::new(Mesh::unit_square(n).unwrap(), p, mode, quad).unwrap()
}

fn row_sums(a: &Dense) -> Vec<(usize, f64)> {
    a.iter().map(|r| r.iter().sum()).enumerate().collect()
}

fn shifted(w: &[(usize, f64)], offset: usize) -> Vec<(usize, f64)> {
    w.iter().map(|&(i, v)| (i + offset, v)).collect()
}

/// One step assembled densely from the quadrature oracle and solved as a
/// single bordered system. Returns `(u, p, c)`.
fn oracle_step(
    d: &Discretization,
    data: &dyn ProblemData,
    s: &FieldState,
    scheme: Scheme,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mesh, v, p, c) = (&d.mesh, &d.velocity, &d.pressure, &d.concentration);
    let prm = d.params;
    let (nv, np, nc) = (v.n_dofs(), p.n_dofs(), c.n_dofs());
    let (po, co) = (nv, nv + np);
    let first = s.step == 0;
    let tau = prm.time_step;
    let t = (s.step + 1) as f64 * tau;
    let [a0, a1, a2] = if first { [1.0, -1.0, 0.0] } else { [1.5, -2.0, 0.5] };
    let lag = |curr: &[f64], prev: &[f64]| -> Vec<f64> {
        if first {
            curr.to_vec()
        } else {
            curr.iter().zip(prev).map(|(a, b)| 2.0 * a - b).collect()
        }
    };
    let wind = lag(&s.u_curr, &s.u_prev);
    let c_lag = lag(&s.c_curr, &s.c_prev);
    let deg = ORACLE_DEGREE;

    let mut a = zeros(nv + np + nc, nv + np + nc);
    let mut b = vec![0.0; nv + np + nc];
    let mut put = |blk: &Dense, r0: usize, c0: usize, scale: f64| {
        for (i, row) in blk.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                a[r0 + i][c0 + j] += scale * x;
            }
        }
    };

    let mv = mass(mesh, v, deg);
    let visc =
        stiffness(mesh, v, deg, false, |t, _, phi| prm.viscosity.eval(eval_scalar(c, &c_lag, t, phi) + prm.alpha));
    let conv = skew(&convection(mesh, v, v, &wind, deg));
    put(&mv, 0, 0, a0 / tau);
    put(&visc, 0, 0, 1.0);
    put(&conv, 0, 0, 1.0);
    let div = divergence(mesh, v, p, deg);
    let div_t: Dense = (0..nv).map(|j| (0..np).map(|i| div[i][j]).collect()).collect();
    put(&div_t, 0, po, -1.0);
    put(&div, po, 0, -1.0);
    let buoy: Dense = vertical_coupling(mesh, v, c, deg)
        .iter()
        .map(|r| r.iter().map(|x| -prm.gravity * prm.gamma * x).collect())
        .collect();

    let mc = mass(mesh, c, deg);
    let diff = stiffness(mesh, c, deg, false, |_, _, _| prm.theta);
    let conv_c = skew(&convection(mesh, c, v, &wind, deg));
    let sw = swim(mesh, c, prm.swim_speed, deg);
    put(&mc, co, co, a0 / tau);
    put(&diff, co, co, 1.0);
    put(&conv_c, co, co, 1.0);

    let hist = |m: &Dense, curr: &[f64], prev: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = curr.iter().zip(prev).map(|(x, y)| -(a1 * x + a2 * y) / tau).collect();
        mat_vec(m, &h)
    };
    let fu = load_vector(mesh, v, deg, |x| data.momentum_source(x, t));
    let gu = load_vector(mesh, v, deg, |_| [0.0, -prm.gravity]);
    for (i, h) in hist(&mv, &s.u_curr, &s.u_prev).into_iter().enumerate() {
        b[i] = h + fu[i] + gu[i];
    }
    let fc = if d.mode == Mode::Manufactured {
        load_scalar(mesh, c, deg, |x| data.concentration_source(x, t))
    } else {
        vec![0.0; nc]
    };
    let swim_const = mat_vec(&sw, &vec![prm.alpha; nc]);
    for (i, h) in hist(&mc, &s.c_curr, &s.c_prev).into_iter().enumerate() {
        b[co + i] = h + fc[i] + swim_const[i];
    }

    if scheme == Scheme::Coupled {
        put(&buoy, 0, co, -1.0);
    } else {
        for (i, x) in mat_vec(&buoy, &c_lag).into_iter().enumerate() {
            b[i] += x;
        }
    }
    if scheme == Scheme::Coupled && !first {
        put(&sw, co, co, -1.0);
    } else {
        for (i, x) in mat_vec(&sw, &c_lag).into_iter().enumerate() {
            b[co + i] += x;
        }
    }

    for node in mesh.boundary_nodes() {
        let x = mesh.nodes()[node];
        let g = data.velocity_trace(x, t);
        pin_row(&mut a, &mut b, v.node_dof(node, 0), g[0]);
        pin_row(&mut a, &mut b, v.node_dof(node, 1), g[1]);
        if d.mode == Mode::Manufactured {
            pin_row(&mut a, &mut b, co + node, data.concentration_trace(x, t));
        }
    }
    border(&mut a, &mut b, &shifted(&row_sums(&mass(mesh, p, deg)), po), 0.0);
    if d.mode == Mode::Physical {
        border(&mut a, &mut b, &shifted(&row_sums(&mc), co), 0.0);
    }
    let x = dense_solve(a, b);
    (x[..nv].to_vec(), x[po..co].to_vec(), x[co..co + nc].to_vec())
}

fn compare_with_oracle(mode: Mode, scheme: Scheme) {
    let d = disc(2, mode, params());
    let exact = ExactSolution::new(d.params);
    let (mut s, data): (FieldState, Box<dyn ProblemData>) = match mode {
        Mode::Manufactured => {
            (d.initial_state(|x| exact.velocity(x, 0.0), |x| exact.concentration(x, 0.0)), Box::new(exact))
        }
        Mode::Physical => (d.initial_state(stream_velocity, cosine_concentration), Box::new(Unforced)),
    };
    for k in 0..3 {
        let (u, p, c) = oracle_step(&d, data.as_ref(), &s, scheme);
        let (next, diag) = step(&d, scheme, data.as_ref(), &s).unwrap();
        let errs = [max_diff_vec(&next.u_curr, &u), max_diff_vec(&next.p_curr, &p), max_diff_vec(&next.c_curr, &c)];
        for (name, e) in ["u", "p", "c"].iter().zip(errs) {
            assert!(e < 1e-10, "{mode} {scheme} step {}: {name} deviates by {e:e}", k + 1);
        }
        assert!(diag.flow_residual < 1e-10 && diag.concentration_residual < 1e-10);
        s = next;
    }
}

#[test]
fn decoupled_steps_match_dense_oracle() {
    compare_with_oracle(Mode::Manufactured, Scheme::Decoupled);
}

#[test]
fn coupled_steps_match_dense_oracle() {
    compare_with_oracle(Mode::Manufactured, Scheme::Coupled);
}

#[test]
fn physical_steps_match_dense_oracle() {
    compare_with_oracle(Mode::Physical, Scheme::Decoupled);
    compare_with_oracle(Mode::Physical, Scheme::Coupled);
}

#[test]
fn physical_runs_keep_zero_means() {
    for scheme in [Scheme::Decoupled, Scheme::Coupled] {
        let d = disc(8, Mode::Physical, ModelParams { time_step: 0.125, ..params() });
        let s0 = d.initial_state(stream_velocity, cosine_concentration);
        assert!(d.concentration_mean(&s0.c_curr).abs() < 1e-14);
        let run = run_simulation(&d, scheme, &Unforced, s0).unwrap();
        assert_eq!(run.diagnostics.len(), 8);
        for diag in &run.diagnostics {
            assert!(diag.pressure_mean.abs() < 1e-12, "{scheme}: {:e}", diag.pressure_mean);
            assert!(diag.concentration_mean.abs() < 1e-12, "{scheme}: {:e}", diag.concentration_mean);
            assert!(diag.velocity_convection < 1e-12 && diag.concentration_convection < 1e-12);
        }
    }
}

#[test]
fn telescope_identity_holds_for_arbitrary_levels() {
    let d = disc(4, Mode::Manufactured, params());
    let m = &d.ops.velocity_mass;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let mut v = || -> Vec<f64> { (0..d.nv()).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (a, b, c) = (v(), v(), v());
        let tau = rng.random_range(1e-3..1.0);
        assert!(telescope_residual(m, &a, &b, &c, tau) < 1e-13);
    }
}

#[test]
fn telescope_residual_is_recorded_for_bdf2_steps() {
    let d = disc(4, Mode::Manufactured, params());
    let exact = ExactSolution::new(d.params);
    let s0 = d.initial_state(|x| exact.velocity(x, 0.0), |x| exact.concentration(x, 0.0));
    let run = run_simulation(&d, Scheme::Decoupled, &exact, s0).unwrap();
    assert!(run.diagnostics[0].velocity_telescope.is_none());
    for diag in &run.diagnostics[1..] {
        assert!(diag.velocity_telescope.unwrap() < 1e-11);
        assert!(diag.concentration_telescope.unwrap() < 1e-11);
    }
}

#[test]
fn step_order_is_enforced() {
    let d = disc(2, Mode::Physical, params());
    let s0 = d.initial_state(stream_velocity, cosine_concentration);
    assert!(matches!(bdf2_step_coupled(&d, &Unforced, &s0), Err(SchemeError::StateMismatch(_))));
    let (s1, _) = first_step_decoupled(&d, &Unforced, &s0).unwrap();
    assert!(matches!(first_step_coupled(&d, &Unforced, &s1), Err(SchemeError::StateMismatch(_))));
    assert!(bdf2_step_decoupled(&d, &Unforced, &s1).is_ok());
    let mut bad = s1.clone();
    bad.c_curr.pop();
    assert!(matches!(bdf2_step_decoupled(&d, &Unforced, &bad), Err(SchemeError::StateMismatch(_))));
}

#[test]
fn single_time_step_is_rejected() {
    let d = disc(2, Mode::Physical, ModelParams { time_step: 1.0, ..params() });
    let s0 = d.initial_state(stream_velocity, cosine_concentration);
    assert!(matches!(run_simulation(&d, Scheme::Coupled, &Unforced, s0), Err(SchemeError::StepCount { .. })));
}
