//! Legacy ASCII VTK export of nodal fields.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::schemes::{Discretization, FieldState};

use super::report::write_atomic;

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("state does not match the discretization: {0}")]
    Mismatch(String),
}

fn num(x: f64) -> String {
    format!("{:.8e}", x + 0.0)
}

/// Unstructured grid with `velocity`, `pressure` and `concentration` point
/// data. The velocity is the nodal P1 part; bubble coefficients are dropped.
/// The concentration is written unshifted, i.e. with `alpha` added back.
pub fn vtk_string(d: &Discretization, state: &FieldState) -> Result<String, VtkError> {
    let lens = [
        ("velocity", state.u_curr.len(), d.nv()),
        ("pressure", state.p_curr.len(), d.np()),
        ("concentration", state.c_curr.len(), d.nc()),
    ];
    for (name, got, want) in lens {
        if got != want {
            return Err(VtkError::Mismatch(format!("{name} has {got} coefficients, expected {want}")));
        }
    }
    let mesh = &d.mesh;
    let nodes = mesh.nodes();
    let tris = mesh.triangles();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(
        out,
        "bioconv t={} n={} velocity is the P1 nodal part, bubble components dropped",
        num(state.time),
        mesh.subdivisions()
    );
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", nodes.len());
    for p in nodes {
        let _ = writeln!(out, "{} {} {}", num(p[0]), num(p[1]), num(0.0));
    }
    let _ = writeln!(out, "CELLS {} {}", tris.len(), 4 * tris.len());
    for t in tris {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", tris.len());
    for _ in tris {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {}", nodes.len());
    out.push_str("VECTORS velocity double\n");
    for i in 0..nodes.len() {
        let u = state.u_curr[d.velocity.node_dof(i, 0)];
        let v = state.u_curr[d.velocity.node_dof(i, 1)];
        let _ = writeln!(out, "{} {} {}", num(u), num(v), num(0.0));
    }
    out.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for i in 0..nodes.len() {
        let _ = writeln!(out, "{}", num(state.p_curr[d.pressure.node_dof(i, 0)]));
    }
    out.push_str("SCALARS concentration double 1\nLOOKUP_TABLE default\n");
    for i in 0..nodes.len() {
        let _ = writeln!(out, "{}", num(state.c_curr[d.concentration.node_dof(i, 0)] + d.params.alpha));
    }
    Ok(out)
}

pub fn export_vtk(d: &Discretization, state: &FieldState, path: &Path) -> Result<(), VtkError> {
    let text = vtk_string(d, state)?;
    write_atomic(path, &text).map_err(|source| VtkError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ModelParams;
    use crate::fem::QuadratureRule;
    use crate::mesh::Mesh;
    use crate::schemes::Mode;

    fn disc(n: usize) -> Discretization {
        let params = ModelParams { time_step: 0.5, ..Default::default() };
        Discretization::new(
            Mesh::unit_square(n).unwrap(),
            params,
            Mode::Manufactured,
            QuadratureRule::with_degree(5).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_counts() {
        let d = disc(1);
        let s = d.initial_state(|_| [0.0; 2], |_| 0.0);
        let text = vtk_string(&d, &s).unwrap();
        assert!(text.contains("POINTS 4 double\n"));
        assert!(text.contains("CELLS 2 8\n"));
        assert!(text.contains("CELL_TYPES 2\n5\n5\n"));
        assert!(text.contains("POINT_DATA 4\n"));
        assert!(text.lines().nth(1).unwrap().contains("bubble components dropped"));
    }

    #[test]
    fn zero_state_writes_zeros() {
        let d = disc(2);
        let s = d.initial_state(|_| [0.0; 2], |_| 0.0);
        let text = vtk_string(&d, &s).unwrap();
        let data = text.split("POINT_DATA").nth(1).unwrap();
        for tok in data.split_whitespace() {
            if let Ok(v) = tok.parse::<f64>() {
                if tok.contains('e') {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_lengths() {
        let d = disc(1);
        let mut s = d.initial_state(|_| [0.0; 2], |_| 0.0);
        s.p_curr.pop();
        assert!(matches!(vtk_string(&d, &s), Err(VtkError::Mismatch(_))));
    }
}
