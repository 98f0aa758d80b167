//! Continuous-time Lyapunov equations `b Φ + Φ bᵀ = H` and the symmetry
//! vocabulary used by the structured solvers.
//!
//! Besides the ordinary transpose there is the *cross-transpose*
//! `(M^C)_ij = M_{K+1-j, K+1-i}` (reflection across the anti-diagonal), which
//! implements the left–right mirror symmetry of the chain.  For phase-space
//! matrices of order `2N`, block form `M = [[A, B], [C, D]]`, the combined
//! operation `M^{CT} = (J M J)^C = [[A^C, C^C], [B^C, D^C]]` (with `J` the
//! block swap) is the one the mirror symmetry of the dynamics preserves:
//! the stationary solve maps CT-(anti)symmetric right-hand sides to
//! CT-(anti)symmetric solutions.
//!
//! The primary solver reduces `b` to real Schur form and back-substitutes
//! block-wise (Bartels–Stewart); an independent dense Kronecker solve is kept
//! as an oracle for small orders.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{matrix_exp, max_norm};
use crate::{ChainError, Result};

/// Default relative tolerance for symmetry classification.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-12;

/// Relative residual the Lyapunov solver is expected to reach; beyond this a
/// warning is attached to the solution.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;

/// Largest order accepted by the dense Kronecker oracle (the `K²×K²` system
/// grows fast; the oracle is meant for cross-checks at small order).
pub const KRONECKER_MAX_ORDER: usize = 40;

/// Structural symmetry classes under transpose, cross-transpose and the
/// phase-space CT operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymmetryTag {
    /// `Mᵀ = M`
    Symmetric,
    /// `Mᵀ = -M`
    Antisymmetric,
    /// `M^C = M`
    CSymmetric,
    /// `M^C = -M`
    CAntisymmetric,
    /// `M^{CT} = M` (phase-space matrices of even order)
    CtSymmetric,
    /// `M^{CT} = -M`
    CtAntisymmetric,
}

/// Reflection across the anti-diagonal: `(M^C)_ij = M_{K+1-j, K+1-i}`.
pub fn cross_transpose(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    assert_eq!(k, m.ncols(), "cross_transpose needs a square matrix");
    DMatrix::from_fn(k, k, |i, j| m[(k - 1 - j, k - 1 - i)])
}

/// The CT image `(J M J)^C` of an even-order matrix, with `J` swapping the
/// two half-blocks of the index range.
pub fn ct_image(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    if k != m.ncols() {
        return Err(ChainError::DimensionMismatch(format!(
            "ct_image needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if k % 2 != 0 {
        return Err(ChainError::DimensionMismatch(format!(
            "CT symmetry is defined for even order only, got {k}"
        )));
    }
    let n = k / 2;
    let swap = |i: usize| if i < n { i + n } else { i - n };
    Ok(DMatrix::from_fn(k, k, |i, j| {
        m[(swap(k - 1 - j), swap(k - 1 - i))]
    }))
}

fn defect_within(m: &DMatrix<f64>, image: &DMatrix<f64>, sign: f64, tol_abs: f64) -> bool {
    let mut defect = 0.0_f64;
    for (a, b) in m.iter().zip(image.iter()) {
        defect = defect.max((a - sign * b).abs());
    }
    defect <= tol_abs
}

/// Tags under transpose and cross-transpose that hold up to `tol` (relative
/// to the max-norm of `m`).  An empty set means no symmetry.
pub fn classify_symmetry(m: &DMatrix<f64>, tol: f64) -> BTreeSet<SymmetryTag> {
    let tol_abs = tol * max_norm(m);
    let mut tags = BTreeSet::new();
    let t = m.transpose();
    let c = cross_transpose(m);
    if defect_within(m, &t, 1.0, tol_abs) {
        tags.insert(SymmetryTag::Symmetric);
    }
    if defect_within(m, &t, -1.0, tol_abs) {
        tags.insert(SymmetryTag::Antisymmetric);
    }
    if defect_within(m, &c, 1.0, tol_abs) {
        tags.insert(SymmetryTag::CSymmetric);
    }
    if defect_within(m, &c, -1.0, tol_abs) {
        tags.insert(SymmetryTag::CAntisymmetric);
    }
    tags
}

/// CT tags of an even-order phase-space matrix; errors on odd order.
pub fn classify_ct(m: &DMatrix<f64>, tol: f64) -> Result<BTreeSet<SymmetryTag>> {
    let image = ct_image(m)?;
    let tol_abs = tol * max_norm(m);
    let mut tags = BTreeSet::new();
    if defect_within(m, &image, 1.0, tol_abs) {
        tags.insert(SymmetryTag::CtSymmetric);
    }
    if defect_within(m, &image, -1.0, tol_abs) {
        tags.insert(SymmetryTag::CtAntisymmetric);
    }
    Ok(tags)
}

/// Solution of a Lyapunov solve, with its achieved residual.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub phi: DMatrix<f64>,
    /// `‖b Φ + Φ bᵀ - H‖_max`.
    pub residual_max: f64,
    /// Set when the residual exceeds [`LYAPUNOV_RESIDUAL_TOL`]·‖H‖_max,
    /// which signals ill-conditioning rather than a wrong answer.
    pub warning: Option<String>,
}

/// Schur-based Lyapunov solver; factor once, solve for many right-hand sides.
pub struct LyapunovSolver {
    q: DMatrix<f64>,
    t: DMatrix<f64>,
    order: usize,
    abscissa: f64,
}

impl LyapunovSolver {
    /// Computes the real Schur form of `b` and checks that `b` is Hurwitz.
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        let order = b.nrows();
        if order != b.ncols() {
            return Err(ChainError::DimensionMismatch(format!(
                "drift matrix must be square, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let schur = nalgebra::linalg::Schur::try_new(b.clone(), f64::EPSILON, 0)
            .ok_or(ChainError::EigenFailure { order })?;
        let (q, t) = schur.unpack();
        let abscissa = quasi_triangular_real_parts(&t)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if abscissa >= 0.0 {
            return Err(ChainError::UnstableDrift { abscissa });
        }
        Ok(LyapunovSolver {
            q,
            t,
            order,
            abscissa,
        })
    }

    /// Largest eigenvalue real part of the factored drift matrix.
    pub fn spectral_abscissa(&self) -> f64 {
        self.abscissa
    }

    /// Solves `b Φ + Φ bᵀ = H`, with one step of iterative refinement when
    /// the first pass misses the residual target.
    pub fn solve(&self, h: &DMatrix<f64>) -> Result<LyapunovSolution> {
        if h.nrows() != self.order || h.ncols() != self.order {
            return Err(ChainError::DimensionMismatch(format!(
                "right-hand side is {}x{}, expected order {}",
                h.nrows(),
                h.ncols(),
                self.order
            )));
        }
        let b = &self.q * &self.t * self.q.transpose();
        let mut phi = self.solve_once(h)?;
        let tol_abs = LYAPUNOV_RESIDUAL_TOL * max_norm(h).max(f64::MIN_POSITIVE);
        let mut residual = h - (&b * &phi + &phi * b.transpose());
        if max_norm(&residual) > tol_abs {
            let correction = self.solve_once(&residual)?;
            phi += correction;
            residual = h - (&b * &phi + &phi * b.transpose());
        }
        let residual_max = max_norm(&residual);
        let warning = if residual_max > tol_abs {
            Some(format!(
                "residual {residual_max:.3e} exceeds target {tol_abs:.3e}; the solve is ill-conditioned"
            ))
        } else {
            None
        };
        Ok(LyapunovSolution {
            phi,
            residual_max,
            warning,
        })
    }

    /// One Bartels–Stewart back-substitution pass.
    fn solve_once(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let c = self.q.transpose() * h * &self.q;
        let blocks = diagonal_blocks(&self.t);
        let nb = blocks.len();
        let mut y: DMatrix<f64> = DMatrix::zeros(self.order, self.order);
        // Iterate column blocks and row blocks from the bottom-right corner,
        // so the sums below only touch already-solved blocks.
        for jb in (0..nb).rev() {
            let (j0, js) = blocks[jb];
            for ib in (0..nb).rev() {
                let (i0, is) = blocks[ib];
                let mut w = c.view((i0, j0), (is, js)).into_owned();
                // subtract T_{i,k} Y_{k,j} for k > i
                for kb in ib + 1..nb {
                    let (k0, ks) = blocks[kb];
                    let t_ik = self.t.view((i0, k0), (is, ks));
                    let y_kj = y.view((k0, j0), (ks, js));
                    w -= t_ik * y_kj;
                }
                // subtract Y_{i,k} T_{j,k}ᵀ for k > j
                for kb in jb + 1..nb {
                    let (k0, ks) = blocks[kb];
                    let y_ik = y.view((i0, k0), (is, ks));
                    let t_jk = self.t.view((j0, k0), (js, ks));
                    w -= y_ik * t_jk.transpose();
                }
                let t_ii = self.t.view((i0, i0), (is, is)).into_owned();
                let t_jj = self.t.view((j0, j0), (js, js)).into_owned();
                let sol = solve_small_sylvester(&t_ii, &t_jj, &w)?;
                y.view_mut((i0, j0), (is, js)).copy_from(&sol);
            }
        }
        Ok(&self.q * y * self.q.transpose())
    }
}

/// Convenience wrapper: factor `b` and solve a single right-hand side.
pub fn solve_lyapunov(b: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<LyapunovSolution> {
    LyapunovSolver::new(b)?.solve(h)
}

/// `‖b Φ + Φ bᵀ - H‖_max`, the natural residual of a candidate solution.
pub fn lyapunov_residual(b: &DMatrix<f64>, phi: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    max_norm(&(h - (b * phi + phi * b.transpose())))
}

/// Independent dense solve of the same equation through the Kronecker-product
/// linear system `(I⊗b + b⊗I) vec(Φ) = vec(H)`; an oracle for small orders.
pub fn solve_lyapunov_kronecker(b: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = b.nrows();
    if k != b.ncols() || h.nrows() != k || h.ncols() != k {
        return Err(ChainError::DimensionMismatch(
            "Kronecker solve needs square b and matching H".into(),
        ));
    }
    if k > KRONECKER_MAX_ORDER {
        return Err(ChainError::InvalidParameter(format!(
            "Kronecker oracle limited to order ≤ {KRONECKER_MAX_ORDER}, got {k}"
        )));
    }
    let id = DMatrix::<f64>::identity(k, k);
    let m = id.kronecker(b) + b.kronecker(&id);
    let rhs = DVector::from_column_slice(h.as_slice());
    let x = m
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| ChainError::NoStructuredSolution("Lyapunov operator is singular".into()))?;
    Ok(DMatrix::from_column_slice(k, k, x.as_slice()))
}

/// Stationary covariance as a truncated time integral,
/// `Φ ≈ -∫₀^horizon e^{bt} H e^{bᵀt} dt`, by composite Simpson quadrature.
///
/// The truncation tail is bounded through the spectral abscissa: the call is
/// rejected unless `e^{abscissa·horizon} < 1e-8`, with a suggested horizon in
/// the error otherwise.
pub fn integral_form(
    b: &DMatrix<f64>,
    h: &DMatrix<f64>,
    horizon: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let k = b.nrows();
    if k != b.ncols() || h.nrows() != k || h.ncols() != k {
        return Err(ChainError::DimensionMismatch(
            "integral form needs square b and matching H".into(),
        ));
    }
    if !(horizon > 0.0) || steps == 0 {
        return Err(ChainError::InvalidParameter(
            "integral form needs horizon > 0 and steps ≥ 1".into(),
        ));
    }
    let abscissa = crate::chain::spectral_abscissa(b)?;
    if abscissa >= 0.0 {
        return Err(ChainError::UnstableDrift { abscissa });
    }
    let suppression = (abscissa * horizon).exp();
    if suppression >= 1e-8 {
        return Err(ChainError::HorizonTooShort {
            detail: format!(
                "e^(abscissa·horizon) = {suppression:.3e} ≥ 1e-8 (abscissa {abscissa:.3e})"
            ),
            suggested: (1e-8_f64).ln() / abscissa,
        });
    }
    let steps = steps + steps % 2; // Simpson needs an even panel count
    let dt = horizon / steps as f64;
    let e_step = matrix_exp(&(b * dt));
    let mut e_t = DMatrix::<f64>::identity(k, k);
    let mut acc = h * 1.0; // t = 0 term, weight 1
    for s in 1..=steps {
        e_t = &e_t * &e_step;
        let term = &e_t * h * e_t.transpose();
        let w = if s == steps {
            1.0
        } else if s % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += term * w;
    }
    Ok(-acc * (dt / 3.0))
}

/// Deterministic expectation of the linear-flow noise integral,
/// `∫₀^t Σ_k (e^{bs} X_k)(e^{bs} X_k)ᵀ ds`, by composite Simpson quadrature.
///
/// For the chain this equals the covariance accumulated by time `t` when the
/// dynamics is linear, and grows monotonically in `t` in the positive
/// semidefinite order.
pub fn linear_malliavin_expectation(
    b: &DMatrix<f64>,
    noise_vectors: &[DVector<f64>],
    t: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let k = b.nrows();
    if k != b.ncols() || noise_vectors.iter().any(|v| v.len() != k) {
        return Err(ChainError::DimensionMismatch(
            "noise vectors must match the drift order".into(),
        ));
    }
    if t < 0.0 {
        return Err(ChainError::InvalidParameter("negative time".into()));
    }
    if t == 0.0 {
        return Ok(DMatrix::zeros(k, k));
    }
    if steps == 0 {
        return Err(ChainError::InvalidParameter("steps ≥ 1 required".into()));
    }
    let steps = steps + steps % 2;
    let dt = t / steps as f64;
    let e_step = matrix_exp(&(b * dt));
    let mut vs: Vec<DVector<f64>> = noise_vectors.to_vec();
    let sum_outer = |vs: &[DVector<f64>]| {
        let mut m = DMatrix::zeros(k, k);
        for v in vs {
            m += v * v.transpose();
        }
        m
    };
    let mut acc = sum_outer(&vs);
    for s in 1..=steps {
        for v in vs.iter_mut() {
            *v = &e_step * &*v;
        }
        let w = if s == steps {
            1.0
        } else if s % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += sum_outer(&vs) * w;
    }
    Ok(acc * (dt / 3.0))
}

/// The bath noise directions `X_k` of the chain (scaled momentum unit
/// vectors at the two bath sites).
pub fn noise_vectors(params: &crate::chain::ChainParams) -> Vec<DVector<f64>> {
    let n = params.n;
    let mut v1 = DVector::zeros(2 * n);
    v1[n] = (2.0 * params.gamma * params.k_b * params.t1).sqrt();
    let mut vn = DVector::zeros(2 * n);
    vn[2 * n - 1] = (2.0 * params.gamma * params.k_b * params.tn).sqrt();
    vec![v1, vn]
}

/// Start offsets and sizes of the 1×1 / 2×2 diagonal blocks of a real Schur
/// form.
fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > f64::MIN_POSITIVE {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Eigenvalue real parts read off a quasi-triangular matrix.
fn quasi_triangular_real_parts(t: &DMatrix<f64>) -> Vec<f64> {
    diagonal_blocks(t)
        .into_iter()
        .flat_map(|(i, s)| {
            if s == 1 {
                vec![t[(i, i)]]
            } else {
                // complex pair: real part is the mean of the diagonal
                let re = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
                vec![re, re]
            }
        })
        .collect()
}

/// Solves `A X + X Bᵀ = W` for blocks of size ≤ 2 via the vectorized form.
fn solve_small_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    let id_p = DMatrix::<f64>::identity(p, p);
    let id_q = DMatrix::<f64>::identity(q, q);
    let m = id_q.kronecker(a) + b.kronecker(&id_p);
    let rhs = DVector::from_column_slice(w.as_slice());
    let x = m.full_piv_lu().solve(&rhs).ok_or_else(|| {
        ChainError::NoStructuredSolution("degenerate Schur block in Lyapunov solve".into())
    })?;
    Ok(DMatrix::from_column_slice(p, q, x.as_slice()))
}
