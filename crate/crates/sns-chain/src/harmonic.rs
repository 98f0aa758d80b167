//! Exact stationary covariance of the harmonic (`λ = 0`) chain.
//!
//! Everything is built from two families of hyperbolic-sine ratios.  With
//! `α = arccosh(1 + (ν+κ)/2)` and `ᾱ = arccosh(1 + κ/2)`:
//!
//! ```text
//! φ_j = sinh((N-j)α) / sinh(Nα)          j = 1..N-1
//! g_i = sinh(iᾱ) sinh((N+1-i)ᾱ) / (sinh(ᾱ) sinh((N+1)ᾱ))   i = 1..N
//! ```
//!
//! `φ` solves the tridiagonal system `𝒢^{(N-1)}_{ν+κ} φ = e₁` and `g` is the
//! diagonal of `𝒢_κ⁻¹` (for `κ = 0`: `g_i = i(N+1-i)/(N+1)`).  The covariance
//! blocks in the phase ordering `(q, p)` are
//!
//! ```text
//! X = (kT/ω²)(𝒢_κ⁻¹ + η X⁰)    X⁰_ij = φ_{i+j-1}
//! Y = kT (1 + η Y⁰)            Y⁰_ij = δ_ij(δ_{i1} - δ_{iN}) - ν X⁰_ij
//! Z = (kT/γ) η Z⁰              Z⁰_ij = φ_{j-i}
//! ```
//!
//! where the index extension `φ_0 = 0`, `φ_{-j} = -φ_j`, `φ_{N+j} = -φ_{N-j}`
//! is understood.  Direct evaluation of the sinh ratios overflows once
//! `N·α ≳ 700`, so both vectors are computed in an exponentially scaled form
//! that stays finite for any chain length.

use nalgebra::DMatrix;

use crate::chain::ChainParams;
use crate::linalg::{solve_tridiag_toeplitz, tridiag_toeplitz_inverse};
use crate::{ChainError, Result};

/// Spatial decay rate `α = arccosh(1 + (ν+κ)/2)` of the `φ` vector.
pub fn decay_rate(nu: f64, kappa: f64) -> f64 {
    (1.0 + 0.5 * (nu + kappa)).acosh()
}

/// The vector `φ_1..φ_{N-1}` together with its odd index extension.
///
/// The accessor [`ExtendedPhi::get`] implements the conventions
/// `φ_0 = 0`, `φ_{-j} = -φ_j` and `φ_{N+j} = -φ_{N-j}` that the covariance
/// assembly and the structured recursions rely on; indices outside
/// `[-2N, 2N]` are a logic error and panic.
#[derive(Debug, Clone)]
pub struct ExtendedPhi {
    n: usize,
    base: Vec<f64>,
}

impl ExtendedPhi {
    /// Overflow-safe closed form
    /// `φ_j = e^{-jα} (1 - e^{-2(N-j)α}) / (1 - e^{-2Nα})`.
    pub fn closed_form(n: usize, nu: f64, kappa: f64) -> Result<Self> {
        if n < 2 {
            return Err(ChainError::InvalidParameter(format!(
                "phi vector needs N ≥ 2, got {n}"
            )));
        }
        if !(nu > 0.0) || kappa < 0.0 {
            return Err(ChainError::InvalidParameter(format!(
                "phi vector needs ν > 0 and κ ≥ 0, got ν = {nu}, κ = {kappa}"
            )));
        }
        let alpha = decay_rate(nu, kappa);
        let nf = n as f64;
        let denom = (-2.0 * nf * alpha).exp_m1();
        let base = (1..n)
            .map(|j| {
                let jf = j as f64;
                (-jf * alpha).exp() * (-2.0 * (nf - jf) * alpha).exp_m1() / denom
            })
            .collect();
        Ok(ExtendedPhi { n, base })
    }

    /// Same vector from the tridiagonal solve `𝒢^{(N-1)}_{ν+κ} φ = e₁`
    /// (independent of the closed form; used for cross-checks).
    pub fn from_tridiagonal(n: usize, nu: f64, kappa: f64) -> Result<Self> {
        if n < 2 {
            return Err(ChainError::InvalidParameter(format!(
                "phi vector needs N ≥ 2, got {n}"
            )));
        }
        let mut rhs = vec![0.0; n - 1];
        rhs[0] = 1.0;
        let base = solve_tridiag_toeplitz(2.0 + nu + kappa, -1.0, &rhs)?;
        Ok(ExtendedPhi { n, base })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The raw entries `φ_1..φ_{N-1}`.
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `φ_j` for any `j ∈ [-2N, 2N]` under the odd extension.
    pub fn get(&self, j: i64) -> f64 {
        let n = self.n as i64;
        assert!(
            (-2 * n..=2 * n).contains(&j),
            "phi index {j} outside the extension domain [-{}, {}]",
            2 * n,
            2 * n
        );
        if j < 0 {
            return -self.get(-j);
        }
        if j == 0 || j == n {
            0.0
        } else if j < n {
            self.base[(j - 1) as usize]
        } else {
            // φ_{N+k} = -φ_{N-k}
            -self.get(2 * n - j)
        }
    }

    /// Residual `‖𝒢^{(N-1)}_{ν+κ} φ - e₁‖_∞` of the defining system.
    pub fn tridiagonal_residual(&self, nu: f64, kappa: f64) -> f64 {
        let w = crate::linalg::tridiag_toeplitz_mul(2.0 + nu + kappa, -1.0, &self.base);
        w.iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { (v - 1.0).abs() } else { v.abs() })
            .fold(0.0, f64::max)
    }
}

/// Diagonal of `𝒢_κ⁻¹` in overflow-safe form; `g_i = i(N+1-i)/(N+1)` when
/// `κ = 0`.
pub fn g_vector(n: usize, kappa: f64) -> Vec<f64> {
    let nf = n as f64;
    if kappa == 0.0 {
        return (1..=n)
            .map(|i| {
                let x = i as f64;
                x * (nf + 1.0 - x) / (nf + 1.0)
            })
            .collect();
    }
    let ab = (1.0 + 0.5 * kappa).acosh();
    let denom = (-2.0 * ab).exp_m1() * (-2.0 * (nf + 1.0) * ab).exp_m1();
    (1..=n)
        .map(|i| {
            let x = i as f64;
            (-ab).exp() * (-2.0 * x * ab).exp_m1() * (-2.0 * (nf + 1.0 - x) * ab).exp_m1() / denom
        })
        .collect()
}

/// Dimensionless position–position correction block `X⁰_ij = φ_{i+j-1}`.
pub fn x0_matrix(phi: &ExtendedPhi) -> DMatrix<f64> {
    let n = phi.n();
    DMatrix::from_fn(n, n, |i, j| phi.get((i + j + 1) as i64))
}

/// Dimensionless position–momentum correction block `Z⁰_ij = φ_{j-i}`.
pub fn z0_matrix(phi: &ExtendedPhi) -> DMatrix<f64> {
    let n = phi.n();
    DMatrix::from_fn(n, n, |i, j| phi.get(j as i64 - i as i64))
}

/// Dimensionless momentum–momentum correction block
/// `Y⁰_ij = δ_ij(δ_{i1} - δ_{iN}) - ν X⁰_ij`.
pub fn y0_matrix(phi: &ExtendedPhi, nu: f64) -> DMatrix<f64> {
    let n = phi.n();
    let mut m = x0_matrix(phi) * (-nu);
    m[(0, 0)] += 1.0;
    m[(n - 1, n - 1)] -= 1.0;
    m
}

/// The three independent blocks of a phase-space covariance with
/// antisymmetric position–momentum coupling: `Φ = [[X, Z], [-Z, Y]]`.
#[derive(Debug, Clone)]
pub struct CovarianceBlocks {
    /// Position–position block (units `k T / ω²`).
    pub x: DMatrix<f64>,
    /// Position–momentum block (units `k T / γ`); antisymmetric.
    pub z: DMatrix<f64>,
    /// Momentum–momentum block (units `k T`).
    pub y: DMatrix<f64>,
}

impl CovarianceBlocks {
    pub fn order(&self) -> usize {
        2 * self.x.nrows()
    }

    /// Assembles the full `2N×2N` matrix `[[X, Z], [-Z, Y]]`.
    pub fn assembled(&self) -> DMatrix<f64> {
        let n = self.x.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.x);
        m.view_mut((0, n), (n, n)).copy_from(&self.z);
        m.view_mut((n, 0), (n, n)).copy_from(&(-&self.z));
        m.view_mut((n, n), (n, n)).copy_from(&self.y);
        m
    }

    /// Splits an even-order phase-space matrix into blocks (the lower-left
    /// block is discarded; callers use this on symmetric matrices with
    /// antisymmetric coupling, where it is redundant).
    pub fn from_assembled(m: &DMatrix<f64>) -> Result<Self> {
        let k = m.nrows();
        if k != m.ncols() || k % 2 != 0 {
            return Err(ChainError::DimensionMismatch(format!(
                "phase-space matrix must be square of even order, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = k / 2;
        Ok(CovarianceBlocks {
            x: m.view((0, 0), (n, n)).into_owned(),
            z: m.view((0, n), (n, n)).into_owned(),
            y: m.view((n, n), (n, n)).into_owned(),
        })
    }
}

/// Exact stationary covariance of the harmonic chain, assembled blockwise
/// from the `φ` and `g` vectors (no dense linear algebra involved).
pub fn assemble_phi0(params: &ChainParams) -> Result<CovarianceBlocks> {
    let d = params.derived();
    let n = params.n;
    let phi = ExtendedPhi::closed_form(n, d.nu, params.kappa)?;
    let kt = params.k_b * d.t_mean;
    let ginv = tridiag_toeplitz_inverse(n, 2.0 + params.kappa, -1.0)?;

    let x = (ginv + x0_matrix(&phi) * d.eta) * (kt / (params.omega * params.omega));
    let y = (DMatrix::identity(n, n) + y0_matrix(&phi, d.nu) * d.eta) * kt;
    let z = z0_matrix(&phi) * (kt / params.gamma * d.eta);
    Ok(CovarianceBlocks { x, z, y })
}

/// Kinetic temperature profile `T_i = ⟨p_i²⟩ / k`.
pub fn temperature_profile(blocks: &CovarianceBlocks, k_b: f64) -> Vec<f64> {
    (0..blocks.y.nrows())
        .map(|i| blocks.y[(i, i)] / k_b)
        .collect()
}

/// Stationary bond correlations `⟨q_i p_{i+1}⟩` for `i = 1..N-1`; the energy
/// current through bond `(i, i+1)` is `ω²` times this, and for the exact
/// harmonic covariance every bond carries the same value `(kT/γ) η φ₁`.
pub fn heat_current(blocks: &CovarianceBlocks) -> Vec<f64> {
    let n = blocks.z.nrows();
    (0..n - 1).map(|i| blocks.z[(i, i + 1)]).collect()
}
