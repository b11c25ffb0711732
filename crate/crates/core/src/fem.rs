//! Reference-element shape functions, quadrature and degree-of-freedom maps
//! for the P1 and P1-plus-bubble spaces.

use thiserror::Error;

use crate::mesh::Mesh;

/// Barycentric coordinates `(l1, l2, l3)` on a triangle.
pub type Bary = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("no quadrature rule of degree {0} is available (supported up to 5)")]
    UnsupportedDegree(usize),
    #[error("element {element} out of range for a mesh with {count} triangles")]
    ElementOutOfRange { element: usize, count: usize },
    #[error("coefficient vector has length {actual}, the space has {expected} dofs")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("operation requires a {expected} space")]
    WrongSpace { expected: &'static str },
}

/// Reference gradients of `l1 = 1 - xi - eta`, `l2 = xi`, `l3 = eta`.
const P1_REF_GRADS: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// P1 values and reference gradients at a barycentric point.
pub fn p1_basis(bary: Bary) -> ([f64; 3], [[f64; 2]; 3]) {
    (bary, P1_REF_GRADS)
}

/// Cubic bubble `27 l1 l2 l3`, equal to one at the centroid, with its
/// reference gradient.
pub fn bubble_basis(bary: Bary) -> (f64, [f64; 2]) {
    let [l1, l2, l3] = bary;
    let value = 27.0 * l1 * l2 * l3;
    // d/dxi = d/dl2 - d/dl1, d/deta = d/dl3 - d/dl1
    let grad = [27.0 * (l1 * l3 - l2 * l3), 27.0 * (l1 * l2 - l2 * l3)];
    (value, grad)
}

/// Default rule degree. Every polynomial operator of the P1-bubble
/// discretization is integrated exactly (bubble convection reaches degree 8);
/// the two extra degrees serve the non-polynomial viscosity laws.
pub const DEFAULT_QUADRATURE_DEGREE: usize = 10;

pub const MAX_QUADRATURE_DEGREE: usize = 30;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    (0..m)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Triangle quadrature with weights normalised to sum to one, so
/// that `sum w_q f(x_q) * area` approximates the integral over an element.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Bary>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Cheapest built-in rule that integrates polynomials of `degree` exactly.
    pub fn with_degree(degree: usize) -> Result<Self, FemError> {
        match degree {
            0 | 1 => Ok(Self::centroid()),
            2 => Ok(Self::three_point()),
            3..=5 => Ok(Self::seven_point()),
            6..=8 => Ok(Self::sixteen_point()),
            9..=MAX_QUADRATURE_DEGREE => Ok(Self::collapsed(degree)),
            d => Err(FemError::UnsupportedDegree(d)),
        }
    }

    fn centroid() -> Self {
        let third = 1.0 / 3.0;
        Self { points: vec![[third; 3]], weights: vec![1.0], degree: 1 }
    }

    fn three_point() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        Self { points: vec![[a, b, b], [b, a, b], [b, b, a]], weights: vec![1.0 / 3.0; 3], degree: 2 }
    }

    // Radon's 7-point rule.
    fn seven_point() -> Self {
        let s15 = 15f64.sqrt();
        let third = 1.0 / 3.0;
        let b1 = (6.0 - s15) / 21.0;
        let a1 = 1.0 - 2.0 * b1;
        let w1 = (155.0 - s15) / 1200.0;
        let b2 = (6.0 + s15) / 21.0;
        let a2 = 1.0 - 2.0 * b2;
        let w2 = (155.0 + s15) / 1200.0;
        Self {
            points: vec![
                [third; 3],
                [a1, b1, b1],
                [b1, a1, b1],
                [b1, b1, a1],
                [a2, b2, b2],
                [b2, a2, b2],
                [b2, b2, a2],
            ],
            weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
            degree: 5,
        }
    }

    // Dunavant's 16-point rule.
    fn sixteen_point() -> Self {
        let mut points = vec![[1.0 / 3.0; 3]];
        let mut weights = vec![0.144315607677787];
        let orbits3 = [
            (0.095091634267285, 0.081414823414554, 0.459292588292723),
            (0.103217370534718, 0.658861384496480, 0.170569307751760),
            (0.032458497623198, 0.898905543365938, 0.050547228317031),
        ];
        for (w, a, b) in orbits3 {
            points.extend([[a, b, b], [b, a, b], [b, b, a]]);
            weights.extend([w; 3]);
        }
        let (w, a, b) = (0.027230314174435, 0.008394777409958, 0.263112829634638);
        let c = 1.0 - a - b;
        points.extend([[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]);
        weights.extend([w; 6]);
        Self { points, weights, degree: 8 }
    }

    // Gauss-Legendre product rule on the square collapsed onto the triangle.
    fn collapsed(degree: usize) -> Self {
        let g = gauss_legendre(degree.div_ceil(2) + 1);
        let mut points = Vec::with_capacity(g.len() * g.len());
        let mut weights = Vec::with_capacity(g.len() * g.len());
        for &(s, ws) in &g {
            for &(r, wr) in &g {
                let (xi, eta) = (s, r * (1.0 - s));
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(2.0 * ws * wr * (1.0 - s));
            }
        }
        Self { points, weights, degree }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Bary, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Affine map from the reference triangle onto a mesh element.
#[derive(Debug, Clone, Copy)]
pub struct ElementMap {
    origin: [f64; 2],
    jacobian: [[f64; 2]; 2],
    inv_transpose: [[f64; 2]; 2],
    det: f64,
}

impl ElementMap {
    pub fn new(vertices: [[f64; 2]; 3]) -> Self {
        let [a, b, c] = vertices;
        let jacobian = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        let inv_transpose =
            [[jacobian[1][1] / det, -jacobian[1][0] / det], [-jacobian[0][1] / det, jacobian[0][0] / det]];
        Self { origin: a, jacobian, inv_transpose, det }
    }

    pub fn of(mesh: &Mesh, element: usize) -> Self {
        Self::new(mesh.vertices(element))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn point(&self, bary: Bary) -> [f64; 2] {
        let (xi, eta) = (bary[1], bary[2]);
        [
            self.origin[0] + self.jacobian[0][0] * xi + self.jacobian[0][1] * eta,
            self.origin[1] + self.jacobian[1][0] * xi + self.jacobian[1][1] * eta,
        ]
    }

    /// Physical gradient from a reference gradient.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_transpose[0][0] * g[0] + self.inv_transpose[0][1] * g[1],
            self.inv_transpose[1][0] * g[0] + self.inv_transpose[1][1] * g[1],
        ]
    }
}

/// Scalar shape functions of one element evaluated at one point: the three
/// hat functions, followed by the bubble when the space carries one.
#[derive(Debug, Clone, Copy)]
pub struct Shapes {
    pub values: [f64; 4],
    pub grads: [[f64; 2]; 4],
    pub count: usize,
}

impl Shapes {
    pub fn eval(map: &ElementMap, bary: Bary, with_bubble: bool) -> Self {
        let (v, g) = p1_basis(bary);
        let mut values = [0.0; 4];
        let mut grads = [[0.0; 2]; 4];
        for k in 0..3 {
            values[k] = v[k];
            grads[k] = map.push_gradient(g[k]);
        }
        let count = if with_bubble {
            let (bv, bg) = bubble_basis(bary);
            values[3] = bv;
            grads[3] = map.push_gradient(bg);
            4
        } else {
            3
        };
        Self { values, grads, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    P1Scalar,
    /// P1 with a zero-mean constraint applied at solve time.
    P1ScalarZeroMean,
    /// Two-component P1 enriched with the element bubble.
    P1BubbleVector,
    P1PressureZeroMean,
}

impl SpaceKind {
    pub fn is_vector(self) -> bool {
        matches!(self, SpaceKind::P1BubbleVector)
    }

    pub fn has_bubble(self) -> bool {
        matches!(self, SpaceKind::P1BubbleVector)
    }

    pub fn zero_mean(self) -> bool {
        matches!(self, SpaceKind::P1ScalarZeroMean | SpaceKind::P1PressureZeroMean)
    }

    pub fn components(self) -> usize {
        if self.is_vector() {
            2
        } else {
            1
        }
    }
}

/// Element-to-global numbering for one finite element space.
///
/// Scalar function `s` (node index, or `node_count + element` for a bubble)
/// carries vector component `k` at global index `2 s + k`; within a cell the
/// local index is `2 a + k` for local scalar function `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    kind: SpaceKind,
    n_dofs: usize,
    n_nodes: usize,
    dofs_per_cell: usize,
    cell_dofs: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, kind: SpaceKind) -> Self {
        let n_nodes = mesh.node_count();
        let n_scalar = if kind.has_bubble() { n_nodes + mesh.triangle_count() } else { n_nodes };
        let comps = kind.components();
        let per_scalar = if kind.has_bubble() { 4 } else { 3 };
        let dofs_per_cell = per_scalar * comps;
        let mut cell_dofs = Vec::with_capacity(dofs_per_cell * mesh.triangle_count());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let mut scalars = [tri[0], tri[1], tri[2], n_nodes + t];
            if !kind.has_bubble() {
                scalars[3] = usize::MAX;
            }
            for &s in &scalars[..per_scalar] {
                for k in 0..comps {
                    cell_dofs.push(comps * s + k);
                }
            }
        }
        Self { kind, n_dofs: comps * n_scalar, n_nodes, dofs_per_cell, cell_dofs }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dofs_per_cell(&self) -> usize {
        self.dofs_per_cell
    }

    pub fn n_cells(&self) -> usize {
        self.cell_dofs.len() / self.dofs_per_cell
    }

    pub fn cell(&self, element: usize) -> &[usize] {
        &self.cell_dofs[element * self.dofs_per_cell..(element + 1) * self.dofs_per_cell]
    }

    /// Global index of component `comp` of nodal function `node`.
    pub fn node_dof(&self, node: usize, comp: usize) -> usize {
        self.kind.components() * node + comp
    }

    /// Global index of component `comp` of the bubble on `element`.
    pub fn bubble_dof(&self, element: usize, comp: usize) -> Option<usize> {
        self.kind.has_bubble().then(|| self.kind.components() * (self.n_nodes + element) + comp)
    }

    /// Sorted dofs whose basis function does not vanish on the boundary.
    /// Bubbles never qualify; vector spaces report both components.
    pub fn boundary_dofs(&self, mesh: &Mesh) -> Vec<usize> {
        let comps = self.kind.components();
        mesh.boundary_nodes().into_iter().flat_map(|v| (0..comps).map(move |k| comps * v + k)).collect()
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<(), FemError> {
        if coeffs.len() != self.n_dofs {
            return Err(FemError::LengthMismatch { expected: self.n_dofs, actual: coeffs.len() });
        }
        Ok(())
    }
}

/// Shorthand for [`DofMap::boundary_dofs`].
pub fn locate_boundary_dofs(mesh: &Mesh, space: &DofMap) -> Vec<usize> {
    space.boundary_dofs(mesh)
}

/// Nodal interpolant of a scalar field.
pub fn interpolate_scalar(mesh: &Mesh, space: &DofMap, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; space.n_dofs()];
    for (v, &p) in mesh.nodes().iter().enumerate() {
        out[space.node_dof(v, 0)] = f(p);
    }
    out
}

/// Nodal interpolant of a vector field; bubble coefficients stay zero.
pub fn interpolate_vector(mesh: &Mesh, space: &DofMap, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; space.n_dofs()];
    for (v, &p) in mesh.nodes().iter().enumerate() {
        let val = f(p);
        out[space.node_dof(v, 0)] = val[0];
        out[space.node_dof(v, 1)] = val[1];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarValue {
    pub value: f64,
    pub gradient: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorValue {
    pub value: [f64; 2],
    /// `gradient[i][j] = d u_i / d x_j`
    pub gradient: [[f64; 2]; 2],
}

fn check_element(mesh: &Mesh, element: usize) -> Result<(), FemError> {
    if element >= mesh.triangle_count() {
        return Err(FemError::ElementOutOfRange { element, count: mesh.triangle_count() });
    }
    Ok(())
}

pub fn evaluate_scalar(
    coeffs: &[f64],
    space: &DofMap,
    mesh: &Mesh,
    element: usize,
    bary: Bary,
) -> Result<ScalarValue, FemError> {
    if space.kind().is_vector() {
        return Err(FemError::WrongSpace { expected: "scalar" });
    }
    space.check_len(coeffs)?;
    check_element(mesh, element)?;
    let map = ElementMap::of(mesh, element);
    let shapes = Shapes::eval(&map, bary, false);
    Ok(scalar_at(&shapes, space.cell(element), coeffs))
}

pub fn evaluate_vector(
    coeffs: &[f64],
    space: &DofMap,
    mesh: &Mesh,
    element: usize,
    bary: Bary,
) -> Result<VectorValue, FemError> {
    if !space.kind().is_vector() {
        return Err(FemError::WrongSpace { expected: "vector" });
    }
    space.check_len(coeffs)?;
    check_element(mesh, element)?;
    let map = ElementMap::of(mesh, element);
    let shapes = Shapes::eval(&map, bary, space.kind().has_bubble());
    Ok(vector_at(&shapes, space.cell(element), coeffs))
}

/// Combines tabulated shapes with the coefficients of a scalar cell.
pub(crate) fn scalar_at(shapes: &Shapes, cell: &[usize], coeffs: &[f64]) -> ScalarValue {
    let mut value = 0.0;
    let mut gradient = [0.0; 2];
    for a in 0..shapes.count {
        let c = coeffs[cell[a]];
        value += c * shapes.values[a];
        gradient[0] += c * shapes.grads[a][0];
        gradient[1] += c * shapes.grads[a][1];
    }
    ScalarValue { value, gradient }
}

/// Combines tabulated shapes with the coefficients of a vector cell.
pub(crate) fn vector_at(shapes: &Shapes, cell: &[usize], coeffs: &[f64]) -> VectorValue {
    let mut value = [0.0; 2];
    let mut gradient = [[0.0; 2]; 2];
    for a in 0..shapes.count {
        for k in 0..2 {
            let c = coeffs[cell[2 * a + k]];
            value[k] += c * shapes.values[a];
            gradient[k][0] += c * shapes.grads[a][0];
            gradient[k][1] += c * shapes.grads[a][1];
        }
    }
    VectorValue { value, gradient }
}
