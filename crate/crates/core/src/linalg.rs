//! Dense kernels (Cholesky, partial-pivoting LU, column-pivoted QR), a CSR
//! matrix with deterministic triplet assembly, and the solver interface used
//! for the global system.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::sqrt;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Lower Cholesky factor of a symmetric positive definite matrix, or `None`
/// if a non-positive pivot shows up.
pub fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L x = b` in place for lower triangular `L`.
pub fn solve_lower(l: &DenseMatrix, b: &mut [f64]) {
    for i in 0..l.rows() {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L^T x = b` in place for lower triangular `L`.
pub fn solve_lower_transpose(l: &DenseMatrix, b: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Option<Lu> {
        let n = a.rows();
        assert_eq!(n, a.cols());
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 && n > 0 {
            return None;
        }
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if lu[(i, k)].abs() > lu[(p, k)].abs() {
                    p = i;
                }
            }
            if lu[(p, k)].abs() <= 1e-14 * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
            }
            let piv = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Some(Lu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.perm.len();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Minimum Euclidean norm solution of an underdetermined, possibly rank
/// deficient system `B y = r`, via Householder QR with column pivoting of
/// `B^T`. Rows are expected to be normalised; columns of `B^T` whose
/// remaining norm drops below `tol` are treated as dependent.
#[derive(Clone, Debug)]
pub struct MinNormSolution {
    pub y: Vec<f64>,
    pub rank: usize,
}

pub fn min_norm_solve(b: &DenseMatrix, r: &[f64], tol: f64) -> MinNormSolution {
    let m = b.rows();
    let n = b.cols();
    // Column j of B^T is row j of B: keep them as contiguous vectors.
    let mut cols: Vec<Vec<f64>> = (0..m).map(|i| b.row(i).to_vec()).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let steps = m.min(n);
    let mut rank = 0;
    for s in 0..steps {
        let mut best = s;
        let mut best_norm = -1.0;
        for (j, c) in cols.iter().enumerate().skip(s) {
            let v: f64 = c[s..].iter().map(|x| x * x).sum();
            if v > best_norm {
                best_norm = v;
                best = j;
            }
        }
        let nrm = sqrt(best_norm.max(0.0));
        if nrm <= tol {
            break;
        }
        cols.swap(s, best);
        perm.swap(s, best);
        let x = &cols[s][s..];
        let alpha = if x[0] >= 0.0 { -nrm } else { nrm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
        cols[s][s] = alpha;
        for t in cols[s][s + 1..].iter_mut() {
            *t = 0.0;
        }
        for c in cols.iter_mut().skip(s + 1) {
            let tail = &mut c[s..];
            let f = beta * dot(&v, tail);
            if f != 0.0 {
                for (t, vi) in tail.iter_mut().zip(&v) {
                    *t -= f * vi;
                }
            }
        }
        vs.push(v);
        betas.push(beta);
        rank = s + 1;
    }
    // R^T w = r_sel, R[i][j] = cols[j][i] for i <= j < rank.
    let mut w = vec![0.0; rank];
    for j in 0..rank {
        let mut acc = r[perm[j]];
        for i in 0..j {
            acc -= cols[j][i] * w[i];
        }
        w[j] = acc / cols[j][j];
    }
    let mut y = vec![0.0; n];
    y[..rank].copy_from_slice(&w);
    for s in (0..rank).rev() {
        let tail = &mut y[s..];
        let f = betas[s] * dot(&vs[s], tail);
        if f != 0.0 {
            for (t, vi) in tail.iter_mut().zip(&vs[s]) {
                *t -= f * vi;
            }
        }
    }
    MinNormSolution { y, rank }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in insertion order, so the result is bitwise reproducible.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) outside {nrows}x{ncols}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(col, value)` over the stored entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Iterates all stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("system of size {0} exceeds the dense solver limit")]
    TooLarge(usize),
    #[error("solver backend failure: {0}")]
    Backend(alloc::string::String),
}

/// A direct solver for square sparse systems, possibly indefinite.
pub trait LinearSolver: Sync {
    fn solve(&self, matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolverError>;
}

/// Dense LU fallback, intended for small systems and tests.
#[derive(Clone, Copy, Debug)]
pub struct DenseLuSolver {
    pub max_size: usize,
}

impl Default for DenseLuSolver {
    fn default() -> Self {
        DenseLuSolver { max_size: 4000 }
    }
}

impl LinearSolver for DenseLuSolver {
    fn solve(&self, matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        if matrix.nrows() > self.max_size {
            return Err(SolverError::TooLarge(matrix.nrows()));
        }
        let lu = Lu::factor(&matrix.to_dense()).ok_or(SolverError::Singular)?;
        Ok(lu.solve(rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_major(rows, cols, v.to_vec())
    }

    #[test]
    fn lu_solves_indefinite_with_zero_diagonal() {
        let a = mat(2, 2, &[2.0, 1.0, 1.0, 0.0]);
        let x = Lu::factor(&a).unwrap().solve(&[1.0, 2.0]);
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn lu_rejects_singular() {
        assert!(Lu::factor(&mat(2, 2, &[1.0, 2.0, 2.0, 4.0])).is_none());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = mat(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose());
        for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 3, alloc::vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.matvec(&[1.0, 1.0, 2.0]), alloc::vec![2.0, 3.0]);
    }

    #[test]
    fn min_norm_handles_dependent_rows() {
        // Second row is a copy of the first; third is independent.
        let s = 1.0 / sqrt(2.0);
        let b = mat(3, 3, &[s, s, 0.0, s, s, 0.0, 0.0, 0.0, 1.0]);
        let sol = min_norm_solve(&b, &[s, s, 2.0], 1e-10);
        assert_eq!(sol.rank, 2);
        let y = sol.y;
        assert!((y[0] - 0.5).abs() < 1e-14 && (y[1] - 0.5).abs() < 1e-14 && (y[2] - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn min_norm_is_feasible_and_orthogonal_to_kernel(
            entries in proptest::collection::vec(-1.0f64..1.0, 4 * 7),
        ) {
            let b = mat(4, 7, &entries);
            let r = [0.3, -1.0, 0.7, 0.1];
            let sol = min_norm_solve(&b, &r, 1e-12);
            prop_assume!(sol.rank == 4);
            let by = b.matvec(&sol.y);
            for (u, v) in by.iter().zip(&r) {
                prop_assert!((u - v).abs() < 1e-9);
            }
            // Minimum norm solutions lie in the row space of B: the
            // projection of y onto the row space must be y itself.
            let bbt = b.matmul(&b.transpose());
            let coef = Lu::factor(&bbt).unwrap().solve(&by);
            let proj = b.transpose().matvec(&coef);
            for (u, v) in proj.iter().zip(&sol.y) {
                prop_assert!((u - v).abs() < 1e-7);
            }
        }
    }
}
