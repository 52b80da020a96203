//! Sparse and dense linear algebra helpers shared by the solvers.

use std::io::Write;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Above this many unknowns the SPD solver switches to preconditioned CG.
pub const ITERATIVE_THRESHOLD: usize = 200_000;

/// Accumulates (row, col, value) entries; duplicates are summed on build.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    coo: CooMatrix<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { coo: CooMatrix::new(nrows, ncols) }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.coo.push(row, col, value);
        }
    }

    pub fn nrows(&self) -> usize {
        self.coo.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.coo.ncols()
    }

    pub fn build(&self) -> CsrMatrix<f64> {
        CsrMatrix::from(&self.coo)
    }
}

pub fn matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (i, row) in a.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn transpose_matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    let mut y = vec![0.0; a.ncols()];
    for (i, row) in a.row_iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * xi;
        }
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Quadratic form xᵀAy.
pub fn bilinear(a: &CsrMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &matvec(a, y))
}

/// Triple product AᵀBA for sparse matrices.
pub fn congruence(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let at = a.transpose();
    let ba = b * a;
    &at * &ba
}

/// Largest relative asymmetry max|A_ij − A_ji| / max|A_ij|.
pub fn asymmetry(a: &CsrMatrix<f64>) -> f64 {
    let at = a.transpose();
    let diff = a - &at;
    let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    diff.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

fn to_faer(a: &CsrMatrix<f64>) -> Result<SparseColMat<usize, f64>> {
    let triplets: Vec<Triplet<usize, usize, f64>> = a.triplet_iter().map(|(i, j, v)| Triplet::new(i, j, *v)).collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &triplets).map_err(|e| Error::Solver(format!("sparse conversion: {e:?}")))
}

/// Factorized symmetric positive definite operator.
pub enum SpdSolver {
    Direct { llt: Llt<usize, f64>, n: usize },
    Iterative { a: CsrMatrix<f64>, inv_diag: Vec<f64>, tol: f64, max_iter: usize },
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix<f64>) -> Result<Self> {
        Self::with_threshold(a, ITERATIVE_THRESHOLD)
    }

    pub fn with_threshold(a: &CsrMatrix<f64>, threshold: usize) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Solver("matrix is not square".into()));
        }
        let n = a.nrows();
        if n > threshold {
            let mut inv_diag = vec![1.0; n];
            for (i, j, v) in a.triplet_iter() {
                if i == j {
                    if *v <= 0.0 {
                        return Err(Error::Solver(format!("non-positive diagonal at {i}")));
                    }
                    inv_diag[i] = 1.0 / v;
                }
            }
            return Ok(SpdSolver::Iterative { a: a.clone(), inv_diag, tol: 1e-13, max_iter: 20 * n + 1000 });
        }
        let fa = to_faer(a)?;
        let llt = fa.sp_cholesky(Side::Lower).map_err(|e| Error::Solver(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(SpdSolver::Direct { llt, n })
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdSolver::Direct { n, .. } => *n,
            SpdSolver::Iterative { a, .. } => a.nrows(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Direct { llt, n } => {
                assert_eq!(*n, b.len());
                let rhs = Mat::from_fn(*n, 1, |i, _| b[i]);
                let x = llt.solve(&rhs);
                Ok((0..*n).map(|i| x[(i, 0)]).collect())
            }
            SpdSolver::Iterative { a, inv_diag, tol, max_iter } => pcg(a, inv_diag, b, *tol, *max_iter),
        }
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(a: &CsrMatrix<f64>, inv_diag: &[f64], b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = matvec(a, &p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver("CG breakdown: operator not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver("CG did not converge".into()))
}

/// Orthonormal basis of the nullspace of `a` (columns), using the SVD with a
/// relative singular-value cutoff.
pub fn nullspace(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    let padded = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |s, v| s.max(*v));
    let cutoff = rel_tol * smax.max(1e-300);
    let null_rows: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] <= cutoff).collect();
    let mut basis = DMatrix::zeros(n, null_rows.len());
    for (c, &k) in null_rows.iter().enumerate() {
        for i in 0..n {
            basis[(i, c)] = v_t[(k, i)];
        }
    }
    basis
}

/// Numerical rank by SVD with a relative cutoff.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |s, v| s.max(*v));
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Extreme eigenvalues of the pencil (A, B) with B symmetric positive definite.
pub fn generalized_extreme_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, f64)> {
    if a.nrows() == 0 {
        return Err(Error::Solver("empty eigenproblem".into()));
    }
    let chol = b.clone().cholesky().ok_or_else(|| Error::Solver("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
    let c = &l_inv * a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigenvalues();
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let max = eig.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    Ok((min, max))
}

/// Writes a sparse matrix as `row,col,value` lines.
pub fn export_coordinate<W: Write>(a: &CsrMatrix<f64>, mut out: W) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for (i, j, v) in a.triplet_iter() {
        writeln!(out, "{i},{j},{v:.17e}")?;
    }
    Ok(())
}

/// Writes a dense matrix in coordinate form, skipping exact zeros.
pub fn export_dense_coordinate<W: Write>(a: &DMatrix<f64>, mut out: W) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 {
                writeln!(out, "{i},{j},{v:.17e}")?;
            }
        }
    }
    Ok(())
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
                t.push(i - 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn direct_and_iterative_agree() {
        let a = laplacian_1d(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let x1 = SpdSolver::new(&a).unwrap().solve(&b).unwrap();
        let x2 = SpdSolver::with_threshold(&a, 10).unwrap().solve(&b).unwrap();
        let r = matvec(&a, &x1);
        for i in 0..40 {
            assert!((r[i] - b[i]).abs() < 1e-12);
            assert!((x1[i] - x2[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 1, 1.0);
        let a = t.build();
        assert_eq!(to_dense(&a)[(0, 0)], 3.0);
    }

    #[test]
    fn nullspace_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let n = nullspace(&a, 1e-12);
        assert_eq!(n.ncols(), 2);
        let r = &a * &n;
        assert!(r.amax() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        assert!(SpdSolver::new(&t.build()).is_err());
    }

    #[test]
    fn pencil_extremes() {
        let a = DMatrix::from_diagonal(&dvec(&[2.0, 6.0]));
        let b = DMatrix::from_diagonal(&dvec(&[1.0, 2.0]));
        let (lo, hi) = generalized_extreme_eigenvalues(&a, &b).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }
}
