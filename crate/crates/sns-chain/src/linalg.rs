//! Small dense and tridiagonal linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;

use crate::ChainError;

/// Max-norm `max_ij |m_ij|` (used for residual and tolerance bookkeeping).
pub fn max_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// Matrix exponential `e^A` by scaling-and-squaring with Padé approximants.
///
/// Backed by nalgebra's implementation of the Higham algorithm; accurate to
/// close to machine precision for well-scaled inputs, which comfortably meets
/// the 1e-12 budget the quadrature routines assume.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Solves the symmetric tridiagonal Toeplitz system
/// `diag·x_i + off·(x_{i-1} + x_{i+1}) = rhs_i` (walls `x_0 = x_{n+1} = 0`)
/// with the Thomas algorithm.
///
/// The callers only use diagonally dominant systems (`diag ≥ 2, off = -1`),
/// for which the elimination is stable without pivoting.
pub fn solve_tridiag_toeplitz(diag: f64, off: f64, rhs: &[f64]) -> Result<Vec<f64>, ChainError> {
    let n = rhs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n]; // scratch super-diagonal
    let mut x = vec![0.0; n];
    let mut denom = diag;
    if denom == 0.0 {
        return Err(ChainError::InvalidParameter(
            "tridiagonal solve hit a zero pivot".into(),
        ));
    }
    c[0] = off / denom;
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag - off * c[i - 1];
        if denom == 0.0 {
            return Err(ChainError::InvalidParameter(
                "tridiagonal solve hit a zero pivot".into(),
            ));
        }
        c[i] = off / denom;
        x[i] = (rhs[i] - off * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Multiplies the symmetric tridiagonal Toeplitz matrix
/// (`diag` on the diagonal, `off` off it, walls at both ends) into `v`.
pub fn tridiag_toeplitz_mul(diag: f64, off: f64, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = diag * v[i];
        if i > 0 {
            s += off * v[i - 1];
        }
        if i + 1 < n {
            s += off * v[i + 1];
        }
        out[i] = s;
    }
    out
}

/// Dense symmetric tridiagonal Toeplitz matrix of the given order
/// (`diag` on the diagonal, `off` on both off-diagonals).
pub fn tridiag_toeplitz_matrix(order: usize, diag: f64, off: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order, order);
    for i in 0..order {
        m[(i, i)] = diag;
        if i + 1 < order {
            m[(i, i + 1)] = off;
            m[(i + 1, i)] = off;
        }
    }
    m
}

/// Inverse of the symmetric tridiagonal Toeplitz matrix, column by column via
/// the Thomas algorithm (O(n²) and accurate for the diagonally dominant
/// systems used here).
pub fn tridiag_toeplitz_inverse(order: usize, diag: f64, off: f64) -> Result<DMatrix<f64>, ChainError> {
    let mut inv = DMatrix::zeros(order, order);
    let mut e = vec![0.0; order];
    for j in 0..order {
        e[j] = 1.0;
        let col = solve_tridiag_toeplitz(diag, off, &e)?;
        e[j] = 0.0;
        for i in 0..order {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}
