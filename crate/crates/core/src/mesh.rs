//! Uniform triangulations of the unit square.
//!
//! Nodes are numbered row-major from the origin, node `(i, j)` sitting at
//! `(i/n, j/n)` with index `j * (n + 1) + i`. Every grid cell is split along
//! its lower-left to upper-right diagonal; the lower triangle of a cell comes
//! before the upper one and cells are visited row by row.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("invalid subdivision count {0}: at least one cell per side is required")]
    InvalidSubdivision(usize),
}

/// Side of the unit square an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    subdivisions: usize,
}

impl Mesh {
    /// Builds the `n x n` uniform mesh of `[0,1]^2` with `2 n^2` triangles.
    pub fn unit_square(n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::InvalidSubdivision(n));
        }
        let stride = n + 1;
        let idx = |i: usize, j: usize| j * stride + i;
        let nf = n as f64;

        let mut nodes = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([i as f64 / nf, j as f64 / nf]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = idx(i, j);
                let v10 = idx(i + 1, j);
                let v01 = idx(i, j + 1);
                let v11 = idx(i + 1, j + 1);
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        // Counterclockwise walk around the boundary.
        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push(BoundaryEdge { nodes: [idx(i, 0), idx(i + 1, 0)], side: Side::Bottom });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge { nodes: [idx(n, j), idx(n, j + 1)], side: Side::Right });
        }
        for i in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { nodes: [idx(i + 1, n), idx(i, n)], side: Side::Top });
        }
        for j in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { nodes: [idx(0, j + 1), idx(0, j)], side: Side::Left });
        }

        Ok(Self { nodes, triangles, boundary_edges, subdivisions: n })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Maximum element diameter, `sqrt(2)/n` for this split.
    pub fn h(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let p = t.map(|v| self.nodes[v]);
                let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
            })
            .fold(0.0, f64::max)
    }

    /// Vertex coordinates of triangle `t`.
    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|v| self.nodes[v])
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Unique undirected edges, each as a sorted node pair.
    pub fn edges(&self) -> BTreeSet<[usize; 2]> {
        let mut edges = BTreeSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert([a.min(b), a.max(b)]);
            }
        }
        edges
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let [x, y] = self.nodes[node];
        x == 0.0 || y == 0.0 || x == 1.0 || y == 1.0
    }

    /// Sorted indices of all nodes on the boundary of the square.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.boundary_edges.iter().flat_map(|e| e.nodes).collect();
        set.into_iter().collect()
    }

    /// Area of the domain, computed from the elements.
    pub fn measure(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.signed_area(t)).sum()
    }
}
