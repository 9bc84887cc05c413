//! Dense matrix kernels on top of `nalgebra`.
//!
//! Eigenvalues come from the real Schur form (Hessenberg reduction followed by
//! shifted QR), so repeated and complex-conjugate eigenvalues near the unit
//! circle are handled without the slow convergence of power iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * rb, j * cb), (rb, cb)).copy_from(&(b * s));
        }
    }
    out
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn singular_values(m: &Matrix) -> Vector {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Largest singular value.
pub fn two_norm(m: &Matrix) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix, via the symmetric eigensolver.
pub fn sym_two_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let e = m.clone().symmetric_eigenvalues();
    e.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Number of singular values above `tol`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > tol).count()
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn is_diagonal(m: &Matrix) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Build a matrix from nested rows; all rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Dimension("ragged rows".into()));
    }
    Ok(Matrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
