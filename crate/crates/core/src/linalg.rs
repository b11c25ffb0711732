//! Compressed sparse row storage and constrained direct solves.
//!
//! Dirichlet values are eliminated symmetrically; zero-mean conditions are
//! enforced with Lagrange multipliers through a bordered block elimination,
//! or as a gauge when the constant vector spans the kernel. Small groups of
//! unknowns that only couple among themselves (element bubbles) can be
//! condensed out before the global factorization. The factorization itself is
//! a sparse LU with partial pivoting from `faer`, run sequentially so that
//! repeated solves are bit-identical.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("conflicting Dirichlet values for dof {dof}: {first} vs {second}")]
    ConflictingDirichlet { dof: usize, first: f64, second: f64 },
    #[error("Dirichlet dof {dof} out of range for {n} unknowns")]
    DofOutOfRange { dof: usize, n: usize },
    #[error("mean constraint {index} has no free dofs left after Dirichlet elimination")]
    InconsistentConstraint { index: usize },
    #[error("matrix is singular ({context})")]
    Singular { context: String },
    #[error("local group {group} cannot be condensed: {reason}")]
    Condensation { group: usize, reason: String },
}

/// Square or rectangular matrix in CSR layout with sorted, unique columns
/// per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator; duplicate entries are summed in insertion
/// order when the matrix is built.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Adds `scale * m` with its top-left corner at `(row0, col0)`.
    pub fn add_matrix(&mut self, m: &SparseMatrix, row0: usize, col0: usize, scale: f64) {
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                self.push(row0 + i, col0 + j, scale * v);
            }
        }
    }

    /// Adds `scale * m^T` with its top-left corner at `(row0, col0)`.
    pub fn add_transpose(&mut self, m: &SparseMatrix, row0: usize, col0: usize, scale: f64) {
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                self.push(row0 + j, col0 + i, scale * v);
            }
        }
    }

    pub fn build(self) -> SparseMatrix {
        let Self { nrows, ncols, entries } = self;
        let mut counts = vec![0usize; nrows + 1];
        for &(i, _, _) in &entries {
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); entries.len()];
        for &(i, j, v) in &entries {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(sum);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { nrows, ncols, row_ptr, col_idx, values }
    }
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    /// Keeps exact zeros out of the pattern.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut b = TripletBuilder::new(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "operand length");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        b.add_transpose(self, 0, 0, 1.0);
        b.build()
    }

    /// `sum_k c_k A_k` over matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> SparseMatrix {
        let (nrows, ncols) = terms.first().map_or((0, 0), |(_, m)| (m.nrows, m.ncols));
        let cap = terms.iter().map(|(_, m)| m.nnz()).sum();
        let mut b = TripletBuilder::with_capacity(nrows, ncols, cap);
        for &(c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch");
            b.add_matrix(m, 0, 0, c);
        }
        b.build()
    }

    pub fn scaled(&self, c: f64) -> SparseMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= c);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij + A_ji|`, zero for an antisymmetric matrix.
    pub fn symmetric_part_max(&self) -> f64 {
        let t = self.transpose();
        Self::linear_combination(&[(1.0, self), (1.0, &t)]).max_abs()
    }

    /// `max |A_ij - A_ji|`
    pub fn antisymmetric_part_max(&self) -> f64 {
        let t = self.transpose();
        Self::linear_combination(&[(1.0, self), (-1.0, &t)]).max_abs()
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.nrows).all(|i| {
            self.row(i).all(|(j, _)| {
                let r = self.row_ptr[j]..self.row_ptr[j + 1];
                self.col_idx[r].binary_search(&i).is_ok()
            })
        })
    }
}

/// Zero-mean style condition `sum_i w_i x_i = value`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanConstraint {
    pub weights: Vec<(usize, f64)>,
    pub value: f64,
}

impl MeanConstraint {
    /// `sum_i w_i x_{offset + i} = 0` for a dense weight vector.
    pub fn zero_mean(weights: &[f64], offset: usize) -> Self {
        Self { weights: weights.iter().enumerate().map(|(i, &w)| (offset + i, w)).collect(), value: 0.0 }
    }
}

/// A linear system together with the constraints its solution must satisfy.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet: BTreeMap<usize, f64>,
    /// Conditions enforced with one Lagrange multiplier each. The matrix
    /// must be nonsingular on the free unknowns.
    pub mean_constraints: Vec<MeanConstraint>,
    /// Normalizations of blocks whose constant vector spans the kernel of
    /// the operator, such as a pressure determined up to a constant. One
    /// unknown of the block is pinned during the solve and the block is
    /// shifted afterwards.
    pub gauges: Vec<MeanConstraint>,
    /// Unknowns eliminated group by group before the global factorization.
    /// Groups must not couple to each other and must stay free of Dirichlet
    /// values and constraints.
    pub local_groups: Vec<Vec<usize>>,
}

impl ConstrainedSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            dirichlet: BTreeMap::new(),
            mean_constraints: Vec::new(),
            gauges: Vec::new(),
            local_groups: Vec::new(),
        }
    }

    /// Registers `x[dof] = value`. Re-registering the same value is allowed.
    pub fn fix(&mut self, dof: usize, value: f64) -> Result<(), SolveError> {
        insert_dirichlet(&mut self.dirichlet, dof, value)
    }

    pub fn add_mean_constraint(&mut self, c: MeanConstraint) {
        self.mean_constraints.push(c);
    }

    pub fn add_gauge(&mut self, c: MeanConstraint) {
        self.gauges.push(c);
    }

    pub fn add_local_group(&mut self, dofs: Vec<usize>) {
        self.local_groups.push(dofs);
    }
}

fn insert_dirichlet(map: &mut BTreeMap<usize, f64>, dof: usize, value: f64) -> Result<(), SolveError> {
    match map.get(&dof) {
        Some(&old) if old.to_bits() != value.to_bits() => {
            Err(SolveError::ConflictingDirichlet { dof, first: old, second: value })
        }
        _ => {
            map.insert(dof, value);
            Ok(())
        }
    }
}

/// Builds a Dirichlet map from `(dof, value)` pairs, rejecting conflicts.
pub fn dirichlet_map(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<BTreeMap<usize, f64>, SolveError> {
    let mut map = BTreeMap::new();
    for (dof, v) in pairs {
        insert_dirichlet(&mut map, dof, v)?;
    }
    Ok(map)
}

/// Symmetric elimination: constrained rows and columns are zeroed with a unit
/// diagonal, and the known column contributions move to the right-hand side.
pub fn apply_dirichlet(
    matrix: &SparseMatrix,
    rhs: &[f64],
    constraints: &BTreeMap<usize, f64>,
) -> Result<(SparseMatrix, Vec<f64>), SolveError> {
    let n = matrix.nrows();
    if matrix.ncols() != n || rhs.len() != n {
        return Err(SolveError::Dimension(format!("matrix {}x{}, rhs {}", matrix.nrows(), matrix.ncols(), rhs.len())));
    }
    if constraints.is_empty() {
        return Ok((matrix.clone(), rhs.to_vec()));
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for (&dof, &v) in constraints {
        if dof >= n {
            return Err(SolveError::DofOutOfRange { dof, n });
        }
        fixed[dof] = Some(v);
    }
    let mut b = TripletBuilder::with_capacity(n, n, matrix.nnz());
    let mut out_rhs = rhs.to_vec();
    for i in 0..n {
        if let Some(v) = fixed[i] {
            b.push(i, i, 1.0);
            out_rhs[i] = v;
            continue;
        }
        for (j, a) in matrix.row(i) {
            match fixed[j] {
                Some(v) => out_rhs[i] -= a * v,
                None => b.push(i, j, a),
            }
        }
    }
    Ok((b.build(), out_rhs))
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: Vec<f64>,
    /// One multiplier per mean constraint.
    pub multipliers: Vec<f64>,
    /// Residual of the original equations at the solution, relative to the
    /// right-hand side: free rows with multiplier terms, Dirichlet rows and
    /// constraint rows.
    pub relative_residual: f64,
}

/// Solves a constrained system with a sparse LU factorization.
pub fn solve(system: &ConstrainedSystem) -> Result<Solution, SolveError> {
    let n = system.matrix.nrows();
    if system.matrix.ncols() != n || system.rhs.len() != n {
        return Err(SolveError::Dimension(format!(
            "matrix {}x{}, rhs {}",
            system.matrix.nrows(),
            system.matrix.ncols(),
            system.rhs.len()
        )));
    }
    let mut in_group = vec![usize::MAX; n];
    for (g, dofs) in system.local_groups.iter().enumerate() {
        for &d in dofs {
            if d >= n {
                return Err(SolveError::DofOutOfRange { dof: d, n });
            }
            if in_group[d] != usize::MAX {
                return Err(SolveError::Condensation { group: g, reason: format!("dof {d} is listed twice") });
            }
            if system.dirichlet.contains_key(&d) {
                return Err(SolveError::Condensation {
                    group: g,
                    reason: format!("dof {d} carries a Dirichlet value"),
                });
            }
            in_group[d] = g;
        }
    }
    let touches_group =
        |c: &MeanConstraint| c.weights.iter().map(|&(d, _)| d).find(|&d| d < n && in_group[d] != usize::MAX);

    // pin one unknown per gauge
    let mut fixed = system.dirichlet.clone();
    for (k, gauge) in system.gauges.iter().enumerate() {
        if let Some(&(dof, _)) = gauge.weights.iter().find(|&&(d, _)| d >= n) {
            return Err(SolveError::DofOutOfRange { dof, n });
        }
        if let Some(d) = touches_group(gauge) {
            return Err(SolveError::Condensation { group: in_group[d], reason: format!("dof {d} is in gauge {k}") });
        }
        if gauge.weights.iter().any(|(d, _)| system.dirichlet.contains_key(d)) {
            return Err(SolveError::InconsistentConstraint { index: k });
        }
        let anchor =
            gauge.weights.iter().find(|&&(_, w)| w != 0.0).ok_or(SolveError::InconsistentConstraint { index: k })?;
        insert_dirichlet(&mut fixed, anchor.0, 0.0)?;
    }
    let (reduced, rhs) = apply_dirichlet(&system.matrix, &system.rhs, &fixed)?;

    // multiplier columns on the free unknowns, Dirichlet parts moved to the value
    let mut borders: Vec<(Vec<(usize, f64)>, f64)> = Vec::with_capacity(system.mean_constraints.len());
    for (k, c) in system.mean_constraints.iter().enumerate() {
        if let Some(d) = touches_group(c) {
            return Err(SolveError::Condensation {
                group: in_group[d],
                reason: format!("dof {d} is in constraint {k}"),
            });
        }
        let mut value = c.value;
        let mut free = Vec::new();
        for &(dof, w) in &c.weights {
            if dof >= n {
                return Err(SolveError::DofOutOfRange { dof, n });
            }
            match fixed.get(&dof) {
                Some(&g) => value -= w * g,
                None if w != 0.0 => free.push((dof, w)),
                None => {}
            }
        }
        if free.is_empty() {
            return Err(SolveError::InconsistentConstraint { index: k });
        }
        borders.push((free, value));
    }

    let condensed = Condensed::new(&reduced, &system.local_groups, &in_group)?;
    let lu = LuFactor::new(&condensed.matrix)?;
    let solve_full = |b: &[f64]| -> Result<Vec<f64>, SolveError> {
        let (kept_rhs, ys) = condensed.reduce_rhs(b);
        let kept = lu.solve(&kept_rhs)?;
        Ok(condensed.expand(&kept, &ys))
    };

    // bordered block elimination: x = z - Y lambda, (W^T Y) lambda = W^T z - v
    let mut x = solve_full(&rhs)?;
    let m = borders.len();
    let mut multipliers = vec![0.0; m];
    if m > 0 {
        let mut ys = Vec::with_capacity(m);
        for (w, _) in &borders {
            let mut b = vec![0.0; n];
            for &(i, v) in w {
                b[i] += v;
            }
            ys.push(solve_full(&b)?);
        }
        let mut schur = vec![0.0; m * m];
        let mut r = vec![0.0; m];
        for (k, (w, value)) in borders.iter().enumerate() {
            for l in 0..m {
                schur[k * m + l] = w.iter().map(|&(i, v)| v * ys[l][i]).sum();
            }
            r[k] = w.iter().map(|&(i, v)| v * x[i]).sum::<f64>() - value;
        }
        dense_solve(&mut schur, m, &mut r, 1).map_err(|reason| SolveError::Singular { context: reason })?;
        for (l, y) in ys.iter().enumerate() {
            for (xi, yi) in x.iter_mut().zip(y) {
                *xi -= r[l] * yi;
            }
        }
        multipliers = r;
    }
    check_finite(&x, "constrained solve")?;

    for gauge in &system.gauges {
        let total: f64 = gauge.weights.iter().map(|&(_, w)| w).sum();
        let current: f64 = gauge.weights.iter().map(|&(d, w)| w * x[d]).sum();
        let shift = (gauge.value - current) / total;
        for &(d, _) in &gauge.weights {
            x[d] += shift;
        }
    }

    let relative_residual = equation_residual(system, &x, &multipliers);
    Ok(Solution { values: x, multipliers, relative_residual })
}

/// Residual of the unreduced equations with multiplier terms.
fn equation_residual(system: &ConstrainedSystem, x: &[f64], multipliers: &[f64]) -> f64 {
    let n = x.len();
    let mut border = vec![0.0; n];
    for (c, &l) in system.mean_constraints.iter().zip(multipliers) {
        for &(d, w) in &c.weights {
            border[d] += w * l;
        }
    }
    let ax = system.matrix.mul_vec(x);
    let mut r2 = 0.0;
    let mut b2 = 0.0;
    for i in 0..n {
        match system.dirichlet.get(&i) {
            Some(&g) => {
                r2 += (x[i] - g).powi(2);
                b2 += g * g;
            }
            None => {
                r2 += (system.rhs[i] - ax[i] - border[i]).powi(2);
                b2 += system.rhs[i].powi(2);
            }
        }
    }
    for c in system.mean_constraints.iter().chain(&system.gauges) {
        let s: f64 = c.weights.iter().map(|&(d, w)| w * x[d]).sum();
        r2 += (c.value - s).powi(2);
        b2 += c.value * c.value;
    }
    if b2 > 0.0 {
        (r2 / b2).sqrt()
    } else {
        r2.sqrt()
    }
}

/// Schur complement of a system with respect to local groups of unknowns.
struct Condensed {
    matrix: SparseMatrix,
    n: usize,
    kept: Vec<usize>,
    groups: Vec<GroupSolve>,
}

struct GroupSolve {
    dofs: Vec<usize>,
    /// Outside columns `C` of the group rows.
    cols: Vec<usize>,
    /// `A_BB^{-1} A_BC`, row-major `k x |C|`.
    w: Vec<f64>,
    /// `A_BB^{-1}`, row-major.
    inv: Vec<f64>,
    /// Kept rows `i` with their entries `A_iB`.
    rows: Vec<(usize, Vec<f64>)>,
}

impl Condensed {
    fn new(a: &SparseMatrix, groups: &[Vec<usize>], owner: &[usize]) -> Result<Self, SolveError> {
        let n = a.nrows();
        let mut new_index = vec![usize::MAX; n];
        let mut kept = Vec::with_capacity(n);
        for i in 0..n {
            if owner[i] == usize::MAX {
                new_index[i] = kept.len();
                kept.push(i);
            }
        }
        if groups.is_empty() {
            return Ok(Self { matrix: a.clone(), n, kept, groups: Vec::new() });
        }
        let at = a.transpose();
        let m = kept.len();
        let mut b = TripletBuilder::with_capacity(m, m, a.nnz());
        for &i in &kept {
            for (j, v) in a.row(i) {
                if owner[j] == usize::MAX {
                    b.push(new_index[i], new_index[j], v);
                }
            }
        }

        let mut solves = Vec::with_capacity(groups.len());
        for (g, dofs) in groups.iter().enumerate() {
            let k = dofs.len();
            let local = |d: usize| dofs.iter().position(|&x| x == d);
            let mut cols: Vec<usize> = Vec::new();
            let mut abb = vec![0.0; k * k];
            for (r, &d) in dofs.iter().enumerate() {
                for (j, v) in a.row(d) {
                    if let Some(c) = local(j) {
                        abb[r * k + c] = v;
                    } else if owner[j] != usize::MAX {
                        return Err(SolveError::Condensation { group: g, reason: format!("couples to dof {j}") });
                    } else if !cols.contains(&j) {
                        cols.push(j);
                    }
                }
            }
            cols.sort_unstable();
            let nc = cols.len();
            // [A_BC | I], row-major k x (nc + k)
            let width = nc + k;
            let mut x = vec![0.0; k * width];
            for (r, &d) in dofs.iter().enumerate() {
                for (j, v) in a.row(d) {
                    if owner[j] == usize::MAX {
                        let c = cols.binary_search(&j).expect("column collected above");
                        x[r * width + c] = v;
                    }
                }
                x[r * width + nc + r] = 1.0;
            }
            dense_solve(&mut abb, k, &mut x, width).map_err(|reason| SolveError::Condensation { group: g, reason })?;
            let w: Vec<f64> = (0..k).flat_map(|r| x[r * width..r * width + nc].to_vec()).collect();
            let inv: Vec<f64> = (0..k).flat_map(|r| x[r * width + nc..(r + 1) * width].to_vec()).collect();

            let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (l, &d) in dofs.iter().enumerate() {
                for (i, v) in at.row(d) {
                    if owner[i] == usize::MAX {
                        rows.entry(i).or_insert_with(|| vec![0.0; k])[l] = v;
                    } else if owner[i] != g {
                        return Err(SolveError::Condensation { group: g, reason: format!("couples to dof {i}") });
                    }
                }
            }
            let rows: Vec<(usize, Vec<f64>)> = rows.into_iter().map(|(i, aib)| (new_index[i], aib)).collect();
            for (ni, aib) in &rows {
                for (c, &j) in cols.iter().enumerate() {
                    let s: f64 = (0..k).map(|l| aib[l] * w[l * nc + c]).sum();
                    b.push(*ni, new_index[j], -s);
                }
            }
            solves.push(GroupSolve { dofs: dofs.clone(), cols, w, inv, rows });
        }
        Ok(Self { matrix: b.build(), n, kept, groups: solves })
    }

    /// Condensed right-hand side and the group parts `A_BB^{-1} b_B`.
    fn reduce_rhs(&self, b: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut out: Vec<f64> = self.kept.iter().map(|&i| b[i]).collect();
        let mut ys = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let k = g.dofs.len();
            let y: Vec<f64> = (0..k).map(|r| (0..k).map(|c| g.inv[r * k + c] * b[g.dofs[c]]).sum()).collect();
            for (ni, aib) in &g.rows {
                out[*ni] -= (0..k).map(|l| aib[l] * y[l]).sum::<f64>();
            }
            ys.push(y);
        }
        (out, ys)
    }

    fn expand(&self, kept_values: &[f64], ys: &[Vec<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (&i, &v) in self.kept.iter().zip(kept_values) {
            x[i] = v;
        }
        for (g, y) in self.groups.iter().zip(ys) {
            let nc = g.cols.len();
            for (l, &d) in g.dofs.iter().enumerate() {
                let s: f64 = g.cols.iter().enumerate().map(|(c, &j)| g.w[l * nc + c] * x[j]).sum();
                x[d] = y[l] - s;
            }
        }
        x
    }
}

/// Gaussian elimination with partial pivoting on a small dense `k x k`
/// matrix, overwriting the `k x m` right-hand sides with the solution.
fn dense_solve(a: &mut [f64], k: usize, x: &mut [f64], m: usize) -> Result<(), String> {
    for col in 0..k {
        let piv =
            (col..k).max_by(|&p, &q| a[p * k + col].abs().total_cmp(&a[q * k + col].abs())).expect("nonempty range");
        if a[piv * k + col] == 0.0 || !a[piv * k + col].is_finite() {
            return Err(format!("zero pivot in column {col}"));
        }
        if piv != col {
            for j in 0..k {
                a.swap(col * k + j, piv * k + j);
            }
            for j in 0..m {
                x.swap(col * m + j, piv * m + j);
            }
        }
        for r in col + 1..k {
            let f = a[r * k + col] / a[col * k + col];
            if f == 0.0 {
                continue;
            }
            for j in col..k {
                a[r * k + j] -= f * a[col * k + j];
            }
            for j in 0..m {
                x[r * m + j] -= f * x[col * m + j];
            }
        }
    }
    for col in (0..k).rev() {
        let d = a[col * k + col];
        for j in 0..m {
            let mut s = x[col * m + j];
            for c in col + 1..k {
                s -= a[col * k + c] * x[c * m + j];
            }
            x[col * m + j] = s / d;
        }
    }
    Ok(())
}

/// Sparse LU factors of a square matrix, solved with up to two steps of
/// iterative refinement.
pub struct LuFactor {
    matrix: SparseMatrix,
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl LuFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self, SolveError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SolveError::Dimension(format!("matrix {}x{} is not square", a.nrows(), a.ncols())));
        }
        if n == 0 {
            return Ok(Self { matrix: a.clone(), lu: None });
        }
        faer::set_global_parallelism(Par::Seq);
        let mut triplets = Vec::with_capacity(a.nnz());
        for i in 0..n {
            for (j, v) in a.row(i) {
                triplets.push(Triplet::new(i, j, v));
            }
        }
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| SolveError::Dimension(format!("{e:?}")))?;
        let lu = csc.sp_lu().map_err(|e| SolveError::Singular { context: format!("{e:?}") })?;
        Ok(Self { matrix: a.clone(), lu: Some(lu) })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        let n = self.matrix.nrows();
        if rhs.len() != n {
            return Err(SolveError::Dimension(format!("matrix {n}x{n}, rhs {}", rhs.len())));
        }
        let Some(lu) = &self.lu else {
            return Ok(Vec::new());
        };
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        lu.solve_in_place(&mut x);
        let mut sol: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        check_finite(&sol, "initial solve")?;

        let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            let ax = self.matrix.mul_vec(&sol);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, p)| b - p).collect();
            let rn: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= 1e-14 * bn {
                break;
            }
            let mut d = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
            lu.solve_in_place(&mut d);
            for (i, s) in sol.iter_mut().enumerate() {
                *s += d[(i, 0)];
            }
            check_finite(&sol, "refinement")?;
        }
        Ok(sol)
    }
}

/// Sparse LU solve of a square system.
pub fn lu_solve(a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
    if rhs.len() != a.nrows() {
        return Err(SolveError::Dimension(format!("matrix {}x{}, rhs {}", a.nrows(), a.ncols(), rhs.len())));
    }
    LuFactor::new(a)?.solve(rhs)
}

fn check_finite(x: &[f64], stage: &str) -> Result<(), SolveError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SolveError::Singular { context: format!("non-finite entry at index {i} after {stage}") }),
        None => Ok(()),
    }
}
