//! Independent reference computations shared by the integration tests.
//!
//! Basis functions are built from physical coordinates, integrals use a
//! collapsed Gauss-Legendre rule of adjustable order and systems are solved
//! densely.

#![allow(dead_code)]

use bioconv::fem::DofMap;
use bioconv::linalg::SparseMatrix;
use bioconv::mesh::Mesh;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// Physical points and weights of a collapsed `m x m` rule on a triangle,
/// exact for polynomials of degree `2m - 2`.
pub fn triangle_rule(v: [[f64; 2]; 3], m: usize) -> Vec<([f64; 2], f64)> {
    let g = gauss_legendre(m);
    let jac = ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
    let mut out = Vec::with_capacity(m * m);
    for &(s, ws) in &g {
        for &(r, wr) in &g {
            let xi = s;
            let eta = r * (1.0 - s);
            let w = ws * wr * (1.0 - s) * jac;
            let x = [
                v[0][0] + xi * (v[1][0] - v[0][0]) + eta * (v[2][0] - v[0][0]),
                v[0][1] + xi * (v[1][1] - v[0][1]) + eta * (v[2][1] - v[0][1]),
            ];
            out.push((x, w));
        }
    }
    out
}

/// Number of collapsed points needed for exactness at `degree`.
pub fn points_for(degree: usize) -> usize {
    degree / 2 + 2
}

/// Hat functions of the vertices and the cubic bubble, with gradients, at
/// physical point `x`.
pub fn local_basis(v: [[f64; 2]; 3], x: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let mut lam = [0.0; 3];
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        // lambda_i vanishes on the edge j-k
        let a = [v[j][1] - v[k][1], v[k][0] - v[j][0]];
        grad[i] = [a[0] / det, a[1] / det];
        lam[i] = (a[0] * (x[0] - v[j][0]) + a[1] * (x[1] - v[j][1])) / det;
    }
    let b = 27.0 * lam[0] * lam[1] * lam[2];
    let mut gb = [0.0; 2];
    for d in 0..2 {
        gb[d] = 27.0 * (grad[0][d] * lam[1] * lam[2] + lam[0] * grad[1][d] * lam[2] + lam[0] * lam[1] * grad[2][d]);
    }
    ([lam[0], lam[1], lam[2], b], [grad[0], grad[1], grad[2], gb])
}

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn max_abs(a: &Dense) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter().zip(b).flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max)
}

pub fn max_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dense(m: &SparseMatrix) -> Dense {
    m.to_dense()
}

/// Scalar function count per cell: 4 with the bubble, 3 without.
fn scalars(space: &DofMap) -> usize {
    if space.kind().has_bubble() {
        4
    } else {
        3
    }
}

/// Element loop over the collapsed rule: `f(t, vertices, x, w, values, grads)`.
pub fn for_points(
    mesh: &Mesh,
    degree: usize,
    mut f: impl FnMut(usize, [[f64; 2]; 3], [f64; 2], f64, &[f64; 4], &[[f64; 2]; 4]),
) {
    for t in 0..mesh.triangle_count() {
        let v = mesh.vertices(t);
        for (x, w) in triangle_rule(v, points_for(degree)) {
            let (phi, g) = local_basis(v, x);
            f(t, v, x, w, &phi, &g);
        }
    }
}

/// Value and gradient of a discrete field from the velocity space.
pub fn eval_vector(
    space: &DofMap,
    coeffs: &[f64],
    t: usize,
    phi: &[f64; 4],
    g: &[[f64; 2]; 4],
) -> ([f64; 2], [[f64; 2]; 2]) {
    let cell = space.cell(t);
    let mut u = [0.0; 2];
    let mut du = [[0.0; 2]; 2];
    for a in 0..4 {
        for k in 0..2 {
            let c = coeffs[cell[2 * a + k]];
            u[k] += c * phi[a];
            du[k][0] += c * g[a][0];
            du[k][1] += c * g[a][1];
        }
    }
    (u, du)
}

pub fn eval_scalar(space: &DofMap, coeffs: &[f64], t: usize, phi: &[f64; 4]) -> f64 {
    let cell = space.cell(t);
    (0..3).map(|a| coeffs[cell[a]] * phi[a]).sum()
}

/// `(phi_j, phi_i)`
pub fn mass(mesh: &Mesh, space: &DofMap, degree: usize) -> Dense {
    let n = space.n_dofs();
    let comps = space.kind().components();
    let ns = scalars(space);
    let mut m = zeros(n, n);
    for_points(mesh, degree, |t, _, _, w, phi, _| {
        let cell = space.cell(t);
        for a in 0..ns {
            for b in 0..ns {
                for k in 0..comps {
                    m[cell[comps * a + k]][cell[comps * b + k]] += w * phi[a] * phi[b];
                }
            }
        }
    });
    m
}

/// `(nu grad phi_j, grad phi_i)`, or `(nu D phi_j, D phi_i)` when `symmetric`.
pub fn stiffness(
    mesh: &Mesh,
    space: &DofMap,
    degree: usize,
    symmetric: bool,
    nu: impl Fn(usize, [f64; 2], &[f64; 4]) -> f64,
) -> Dense {
    let n = space.n_dofs();
    let comps = space.kind().components();
    let ns = scalars(space);
    let mut m = zeros(n, n);
    for_points(mesh, degree, |t, _, x, w, phi, g| {
        let cell = space.cell(t);
        let wt = w * nu(t, x, phi);
        for a in 0..ns {
            for b in 0..ns {
                for i in 0..comps {
                    for j in 0..comps {
                        // test phi_a e_i, trial phi_b e_j
                        let v = if symmetric && comps == 2 {
                            let mut s = 0.0;
                            for p in 0..2 {
                                for q in 0..2 {
                                    let da =
                                        0.5 * (if p == i { g[a][q] } else { 0.0 } + if q == i { g[a][p] } else { 0.0 });
                                    let db =
                                        0.5 * (if p == j { g[b][q] } else { 0.0 } + if q == j { g[b][p] } else { 0.0 });
                                    s += da * db;
                                }
                            }
                            s
                        } else if i == j {
                            g[a][0] * g[b][0] + g[a][1] * g[b][1]
                        } else {
                            0.0
                        };
                        m[cell[comps * a + i]][cell[comps * b + j]] += wt * v;
                    }
                }
            }
        }
    });
    m
}

/// `K_ij = (w . grad phi_j, phi_i)` for a wind from the velocity space.
pub fn convection(mesh: &Mesh, space: &DofMap, velocity: &DofMap, wind: &[f64], degree: usize) -> Dense {
    let n = space.n_dofs();
    let comps = space.kind().components();
    let ns = scalars(space);
    let mut m = zeros(n, n);
    for_points(mesh, degree, |t, _, _, w, phi, g| {
        let (wv, _) = eval_vector(velocity, wind, t, phi, g);
        let cell = space.cell(t);
        for a in 0..ns {
            for b in 0..ns {
                let adv = wv[0] * g[b][0] + wv[1] * g[b][1];
                for k in 0..comps {
                    m[cell[comps * a + k]][cell[comps * b + k]] += w * adv * phi[a];
                }
            }
        }
    });
    m
}

pub fn skew(k: &Dense) -> Dense {
    let n = k.len();
    let mut s = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[i][j] = 0.5 * (k[i][j] - k[j][i]);
        }
    }
    s
}

/// `(q_i, div phi_j)`
pub fn divergence(mesh: &Mesh, velocity: &DofMap, pressure: &DofMap, degree: usize) -> Dense {
    let mut m = zeros(pressure.n_dofs(), velocity.n_dofs());
    for_points(mesh, degree, |t, _, _, w, phi, g| {
        let vc = velocity.cell(t);
        let pc = pressure.cell(t);
        for q in 0..3 {
            for a in 0..4 {
                for k in 0..2 {
                    m[pc[q]][vc[2 * a + k]] += w * phi[q] * g[a][k];
                }
            }
        }
    });
    m
}

/// `U (phi_j, d phi_i / dy)`
pub fn swim(mesh: &Mesh, space: &DofMap, u: f64, degree: usize) -> Dense {
    let n = space.n_dofs();
    let mut m = zeros(n, n);
    for_points(mesh, degree, |t, _, _, w, phi, g| {
        let c = space.cell(t);
        for i in 0..3 {
            for j in 0..3 {
                m[c[i]][c[j]] += u * w * phi[j] * g[i][1];
            }
        }
    });
    m
}

/// `(phi_j, phi_i . e2)`, velocity rows by scalar columns.
pub fn vertical_coupling(mesh: &Mesh, velocity: &DofMap, scalar: &DofMap, degree: usize) -> Dense {
    let mut m = zeros(velocity.n_dofs(), scalar.n_dofs());
    for_points(mesh, degree, |t, _, _, w, phi, _| {
        let vc = velocity.cell(t);
        let sc = scalar.cell(t);
        for a in 0..4 {
            for j in 0..3 {
                m[vc[2 * a + 1]][sc[j]] += w * phi[a] * phi[j];
            }
        }
    });
    m
}

pub fn load_vector(mesh: &Mesh, velocity: &DofMap, degree: usize, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; velocity.n_dofs()];
    for_points(mesh, degree, |t, _, x, w, phi, _| {
        let fv = f(x);
        let c = velocity.cell(t);
        for a in 0..4 {
            out[c[2 * a]] += w * fv[0] * phi[a];
            out[c[2 * a + 1]] += w * fv[1] * phi[a];
        }
    });
    out
}

pub fn load_scalar(mesh: &Mesh, space: &DofMap, degree: usize, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; space.n_dofs()];
    for_points(mesh, degree, |t, _, x, w, phi, _| {
        let fv = f(x);
        let c = space.cell(t);
        for a in 0..3 {
            out[c[a]] += w * fv * phi[a];
        }
    });
    out
}

pub fn mat_vec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Dense, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        assert!(a[piv][col].abs() > 1e-300, "singular dense system at column {col}");
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Replaces row `i` by the identity row with value `g`.
pub fn pin_row(a: &mut Dense, b: &mut [f64], i: usize, g: f64) {
    a[i].iter_mut().for_each(|v| *v = 0.0);
    a[i][i] = 1.0;
    b[i] = g;
}

/// Appends one bordering row and column `w` with right-hand side `value`.
pub fn border(a: &mut Dense, b: &mut Vec<f64>, w: &[(usize, f64)], value: f64) {
    let n = a.len();
    for row in a.iter_mut() {
        row.push(0.0);
    }
    let mut last = vec![0.0; n + 1];
    for &(i, wi) in w {
        a[i][n] = wi;
        last[i] = wi;
    }
    a.push(last);
    b.push(value);
}

/// Fourth-order central difference of `f` at `x` with step `h`.
pub fn d4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Momentum and concentration operators applied to the exact fields with
/// finite differences only: returns the residual of the closed-form sources
/// at `(x, t)`.
pub fn forcing_residual(exact: &bioconv::manufactured::ExactSolution, x: [f64; 2], t: f64, h: f64) -> [f64; 3] {
    use bioconv::assembly::ViscousForm;
    let p = exact.params;
    let u = |x: [f64; 2], t: f64| exact.velocity(x, t);
    let c = |x: [f64; 2], t: f64| exact.concentration(x, t);
    let pr = |x: [f64; 2]| exact.pressure(x, t);
    let partial = |f: &dyn Fn([f64; 2]) -> f64, x: [f64; 2], j: usize| {
        d4(
            |s| {
                let mut y = x;
                y[j] = s;
                f(y)
            },
            x[j],
            h,
        )
    };
    // grad u_i
    let du = |x: [f64; 2], i: usize, j: usize| partial(&|y| u(y, t)[i], x, j);
    let nu = |x: [f64; 2]| p.viscosity.eval(c(x, t) + p.alpha);
    let mut res = [0.0; 3];
    let src = exact.momentum_forcing(x, t);
    let uu = u(x, t);
    for i in 0..2 {
        let ut = d4(|s| u(x, s)[i], t, h);
        // flux component j of the viscous stress for row i
        let flux = |y: [f64; 2], j: usize| match p.viscous_form {
            ViscousForm::Gradient => nu(y) * du(y, i, j),
            ViscousForm::Symmetric => nu(y) * 0.5 * (du(y, i, j) + du(y, j, i)),
        };
        let div = partial(&|y| flux(y, 0), x, 0) + partial(&|y| flux(y, 1), x, 1);
        let adv = uu[0] * du(x, i, 0) + uu[1] * du(x, i, 1);
        let grad_p = partial(&pr, x, i);
        let buoy = if i == 1 { p.gravity * (1.0 + p.gamma * c(x, t)) } else { 0.0 };
        res[i] = ut - div + adv + grad_p + buoy - src[i];
    }
    let ct = d4(|s| c(x, s), t, h);
    let dc = |y: [f64; 2], j: usize| partial(&|z| c(z, t), y, j);
    let lap = partial(&|y| dc(y, 0), x, 0) + partial(&|y| dc(y, 1), x, 1);
    let g = ct - p.theta * lap + uu[0] * dc(x, 0) + uu[1] * dc(x, 1) + p.swim_speed * dc(x, 1);
    res[2] = g - exact.concentration_forcing(x, t);
    res
}
