//! Chain parameters, derived scalars, structure matrices, drift and energy.
//!
//! The phase-space vector is ordered `x = (q_1..q_N, p_1..p_N)`.  All
//! dimension-carrying quantities keep their physical prefactors; dimensionless
//! structure (the tridiagonal coupling `𝒢_κ`, the bath indicator `R`) is
//! exposed separately so the structured solvers can work with pure numbers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{ChainError, Result};

/// Physical parameters of the chain.
///
/// Validation happens in [`ChainParams::new`] and on deserialization; the
/// fields stay public so tests can build degenerate fixtures (e.g. zero
/// temperature) deliberately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChainParams", into = "RawChainParams")]
pub struct ChainParams {
    /// Number of oscillators (`N ≥ 2`).
    pub n: usize,
    /// Harmonic frequency of the nearest-neighbour springs (`ω > 0`).
    pub omega: f64,
    /// Bath coupling / friction at the two ends (`γ > 0`).
    pub gamma: f64,
    /// Dimensionless on-site harmonic pinning (`κ ≥ 0`).
    pub kappa: f64,
    /// Quartic on-site coupling (`λ ≥ 0`).
    pub lambda: f64,
    /// Temperature of the bath at site 1 (`T1 > 0`).
    pub t1: f64,
    /// Temperature of the bath at site N (`TN > 0`).
    pub tn: f64,
    /// Boltzmann constant; defaults to 1 (natural units).
    pub k_b: f64,
}

/// Serde image of [`ChainParams`] with the external JSON key spelling.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawChainParams {
    #[serde(rename = "N")]
    n: usize,
    omega: f64,
    gamma: f64,
    kappa: f64,
    lambda: f64,
    #[serde(rename = "T1")]
    t1: f64,
    #[serde(rename = "TN")]
    tn: f64,
    #[serde(rename = "kB", default = "default_kb")]
    k_b: f64,
}

fn default_kb() -> f64 {
    1.0
}

impl TryFrom<RawChainParams> for ChainParams {
    type Error = ChainError;
    fn try_from(raw: RawChainParams) -> Result<ChainParams> {
        ChainParams::new(
            raw.n, raw.omega, raw.gamma, raw.kappa, raw.lambda, raw.t1, raw.tn, raw.k_b,
        )
    }
}

impl From<ChainParams> for RawChainParams {
    fn from(p: ChainParams) -> RawChainParams {
        RawChainParams {
            n: p.n,
            omega: p.omega,
            gamma: p.gamma,
            kappa: p.kappa,
            lambda: p.lambda,
            t1: p.t1,
            tn: p.tn,
            k_b: p.k_b,
        }
    }
}

/// Scalars derived from the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedScalars {
    /// Mean bath temperature `T = (T1 + TN)/2`.
    pub t_mean: f64,
    /// Relative temperature asymmetry `η = (T1 - TN) / (2T)`.
    pub eta: f64,
    /// Stiffness-to-friction ratio `ν = ω²/γ²`.
    pub nu: f64,
    /// Spatial decay rate `α = arccosh(1 + (ν+κ)/2)` of the sinh-ratio vectors.
    pub alpha: f64,
    /// Pinning-only decay rate `ᾱ = arccosh(1 + κ/2)`.
    pub alpha_bar: f64,
}

/// Phase-space point `(q, p)` of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl ChainState {
    /// Both sub-vectors zero.
    pub fn origin(n: usize) -> Self {
        ChainState {
            q: DVector::zeros(n),
            p: DVector::zeros(n),
        }
    }

    /// Packs into the flat ordering `(q_1..q_N, p_1..p_N)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.p);
        x
    }

    /// Unpacks from the flat ordering; `flat.len()` must be even.
    pub fn from_flat(flat: &DVector<f64>) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(ChainError::DimensionMismatch(format!(
                "flat state length {} is odd",
                flat.len()
            )));
        }
        let n = flat.len() / 2;
        Ok(ChainState {
            q: flat.rows(0, n).into_owned(),
            p: flat.rows(n, n).into_owned(),
        })
    }
}

/// The matrices that define the linear part of the dynamics.
#[derive(Debug, Clone)]
pub struct StructMatrices {
    /// Dimensionless coupling matrix `𝒢_κ`: `2+κ` on the diagonal, `-1` on
    /// both off-diagonals (`N×N`).
    pub g_kappa: DMatrix<f64>,
    /// Bath-site indicator `R = diag(1, 0, .., 0, 1)` (`N×N`).
    pub r: DMatrix<f64>,
    /// Drift matrix `b = [[0, I], [-ω²𝒢_κ, -γR]]` (`2N×2N`).
    pub b: DMatrix<f64>,
    /// Noise covariance `D`: zero except the momentum diagonal entries
    /// `2γk T1` and `2γk TN` at the bath sites (`2N×2N`).
    pub d: DMatrix<f64>,
}

impl ChainParams {
    /// Validated constructor.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        omega: f64,
        gamma: f64,
        kappa: f64,
        lambda: f64,
        t1: f64,
        tn: f64,
        k_b: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(ChainError::InvalidParameter(format!(
                "N = {n} is not supported: the chain needs at least two sites"
            )));
        }
        for (name, v, strictly_positive) in [
            ("omega", omega, true),
            ("gamma", gamma, true),
            ("kappa", kappa, false),
            ("T1", t1, true),
            ("TN", tn, true),
            ("kB", k_b, true),
        ] {
            if !v.is_finite() {
                return Err(ChainError::InvalidParameter(format!("{name} = {v} is not finite")));
            }
            if strictly_positive && v <= 0.0 {
                return Err(ChainError::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
            if !strictly_positive && v < 0.0 {
                return Err(ChainError::InvalidParameter(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ChainError::InvalidParameter(format!(
                "lambda = {lambda} must be ≥ 0: a negative quartic coupling makes the potential unconfining"
            )));
        }
        Ok(ChainParams {
            n,
            omega,
            gamma,
            kappa,
            lambda,
            t1,
            tn,
            k_b,
        })
    }

    /// Shorthand used by tests and examples: `kB = 1`.
    pub fn natural(n: usize, omega: f64, gamma: f64, kappa: f64, lambda: f64, t1: f64, tn: f64) -> Result<Self> {
        ChainParams::new(n, omega, gamma, kappa, lambda, t1, tn, 1.0)
    }

    /// Derived scalars `T, η, ν, α, ᾱ`.
    pub fn derived(&self) -> DerivedScalars {
        let t_mean = 0.5 * (self.t1 + self.tn);
        let eta = (self.t1 - self.tn) / (2.0 * t_mean);
        let nu = self.omega * self.omega / (self.gamma * self.gamma);
        DerivedScalars {
            t_mean,
            eta,
            nu,
            alpha: (1.0 + 0.5 * (nu + self.kappa)).acosh(),
            alpha_bar: (1.0 + 0.5 * self.kappa).acosh(),
        }
    }

    /// Builds `𝒢_κ`, `R`, the drift matrix `b` and the noise covariance `D`.
    pub fn struct_matrices(&self) -> StructMatrices {
        let n = self.n;
        let g_kappa = crate::linalg::tridiag_toeplitz_matrix(n, 2.0 + self.kappa, -1.0);
        let mut r = DMatrix::zeros(n, n);
        r[(0, 0)] = 1.0;
        r[(n - 1, n - 1)] = 1.0;

        let mut b = DMatrix::zeros(2 * n, 2 * n);
        let w2 = self.omega * self.omega;
        for i in 0..n {
            b[(i, n + i)] = 1.0;
            for j in 0..n {
                b[(n + i, j)] = -w2 * g_kappa[(i, j)];
            }
        }
        b[(n, n)] = -self.gamma;
        b[(2 * n - 1, 2 * n - 1)] = -self.gamma;

        let mut d = DMatrix::zeros(2 * n, 2 * n);
        d[(n, n)] = 2.0 * self.gamma * self.k_b * self.t1;
        d[(2 * n - 1, 2 * n - 1)] = 2.0 * self.gamma * self.k_b * self.tn;

        StructMatrices { g_kappa, r, b, d }
    }

    /// Full deterministic drift at `state`, including the cubic force
    /// `-λ q_i³` and the bath friction; walls `q_0 = q_{N+1} = 0`.
    pub fn drift_field(&self, state: &ChainState) -> DVector<f64> {
        let n = self.n;
        let w2 = self.omega * self.omega;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            out[i] = state.p[i];
        }
        for i in 0..n {
            let left = if i > 0 { state.q[i - 1] } else { 0.0 };
            let right = if i + 1 < n { state.q[i + 1] } else { 0.0 };
            let qi = state.q[i];
            let mut f = -w2 * ((2.0 + self.kappa) * qi - left - right) - self.lambda * qi * qi * qi;
            if i == 0 || i == n - 1 {
                f -= self.gamma * state.p[i];
            }
            out[n + i] = f;
        }
        out
    }

    /// Total energy: kinetic + spring (including both wall springs) + on-site
    /// pinning + quartic terms.
    pub fn hamiltonian(&self, state: &ChainState) -> f64 {
        let n = self.n;
        let w2 = self.omega * self.omega;
        let mut h = 0.0;
        for i in 0..n {
            let qi = state.q[i];
            h += 0.5 * state.p[i] * state.p[i];
            h += 0.5 * w2 * self.kappa * qi * qi + 0.25 * self.lambda * qi * qi * qi * qi;
        }
        for i in 1..n {
            let d = state.q[i] - state.q[i - 1];
            h += 0.5 * w2 * d * d;
        }
        h += 0.5 * w2 * state.q[0] * state.q[0];
        h += 0.5 * w2 * state.q[n - 1] * state.q[n - 1];
        h
    }
}

/// Result of the drift stability check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityReport {
    /// True when every eigenvalue of `b` has a strictly negative real part.
    pub stable: bool,
    /// Largest real part among the eigenvalues of `b`.
    pub spectral_abscissa: f64,
}

/// Checks that the drift matrix is Hurwitz (all eigenvalues strictly in the
/// left half-plane), which is what makes the stationary covariance well
/// defined.
pub fn check_drift_stability(b: &DMatrix<f64>) -> Result<StabilityReport> {
    let abscissa = spectral_abscissa(b)?;
    Ok(StabilityReport {
        stable: abscissa < 0.0,
        spectral_abscissa: abscissa,
    })
}

/// Largest eigenvalue real part of a square matrix.
pub(crate) fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    let order = m.nrows();
    if order != m.ncols() {
        return Err(ChainError::DimensionMismatch(format!(
            "spectral abscissa needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(ChainError::EigenFailure { order })?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ChainParams {
        ChainParams::natural(2, 1.0, 1.0, 0.0, 0.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn derived_scalars_basic() {
        let d = fixture().derived();
        assert_eq!(d.t_mean, 1.5);
        assert!((d.eta - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.nu, 1.0);
        // cosh(alpha) = 1 + nu/2 = 1.5
        assert!((d.alpha.cosh() - 1.5).abs() < 1e-15);
        assert_eq!(d.alpha_bar, 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ChainParams::natural(1, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ChainParams::natural(4, 1.0, 1.0, 0.0, -0.5, 1.0, 1.0).is_err());
        assert!(ChainParams::natural(4, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ChainParams::natural(4, 1.0, 1.0, -0.1, 0.0, 1.0, 1.0).is_err());
        assert!(ChainParams::natural(4, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn json_roundtrip_and_default_kb() {
        let p: ChainParams = serde_json::from_str(
            r#"{"N": 3, "omega": 1.0, "gamma": 0.5, "kappa": 0.1, "lambda": 0.2, "T1": 2.0, "TN": 1.0}"#,
        )
        .unwrap();
        assert_eq!(p.n, 3);
        assert_eq!(p.k_b, 1.0);
        let s = serde_json::to_string(&p).unwrap();
        let back: ChainParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        // invalid input must fail at deserialization, not later
        assert!(serde_json::from_str::<ChainParams>(
            r#"{"N": 1, "omega": 1.0, "gamma": 0.5, "kappa": 0.0, "lambda": 0.0, "T1": 2.0, "TN": 1.0}"#
        )
        .is_err());
    }

    #[test]
    fn drift_field_cubic_force() {
        // N=2, ω=γ=1, κ=0, λ=1, q=(1,0), p=(0,0):
        // dp_1 = -(2·1 - 0) - 1·1³ = -3, dp_2 = -(2·0 - 1) = 1.
        let p = ChainParams::natural(2, 1.0, 1.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let s = ChainState {
            q: DVector::from_column_slice(&[1.0, 0.0]),
            p: DVector::zeros(2),
        };
        let f = p.drift_field(&s);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.0);
        assert!((f[2] + 3.0).abs() < 1e-15);
        assert!((f[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn drift_field_matches_linear_part_when_lambda_zero() {
        let p = ChainParams::natural(5, 1.3, 0.7, 0.2, 0.0, 2.0, 1.0).unwrap();
        let m = p.struct_matrices();
        let s = ChainState {
            q: DVector::from_column_slice(&[0.3, -0.1, 0.7, 0.2, -0.5]),
            p: DVector::from_column_slice(&[1.0, 0.0, -0.3, 0.4, 0.2]),
        };
        let f = p.drift_field(&s);
        let lin = &m.b * s.to_flat();
        for i in 0..10 {
            assert!((f[i] - lin[i]).abs() < 1e-13, "component {i}");
        }
    }

    #[test]
    fn hamiltonian_values() {
        // N=2, λ=4, κ=0, ω=1, q=(1,0), p=0: walls ½ + spring ½ + quartic 1 = 2.
        let p = ChainParams::natural(2, 1.0, 1.0, 0.0, 4.0, 2.0, 1.0).unwrap();
        let s = ChainState {
            q: DVector::from_column_slice(&[1.0, 0.0]),
            p: DVector::zeros(2),
        };
        assert!((p.hamiltonian(&s) - 2.0).abs() < 1e-15);
        // kinetic only
        let s2 = ChainState {
            q: DVector::zeros(2),
            p: DVector::from_column_slice(&[1.0, 2.0]),
        };
        assert!((p.hamiltonian(&s2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn struct_matrices_shapes_and_entries() {
        let p = ChainParams::natural(3, 2.0, 0.5, 0.3, 0.0, 2.0, 1.0).unwrap();
        let m = p.struct_matrices();
        assert_eq!(m.g_kappa[(0, 0)], 2.3);
        assert_eq!(m.g_kappa[(0, 1)], -1.0);
        assert_eq!(m.g_kappa[(0, 2)], 0.0);
        assert_eq!(m.r[(1, 1)], 0.0);
        assert_eq!(m.r[(2, 2)], 1.0);
        // b blocks
        assert_eq!(m.b[(0, 3)], 1.0);
        assert_eq!(m.b[(3, 0)], -4.0 * 2.3);
        assert_eq!(m.b[(3, 3)], -0.5);
        assert_eq!(m.b[(4, 4)], 0.0);
        assert_eq!(m.b[(5, 5)], -0.5);
        // D: only two nonzero entries
        assert_eq!(m.d[(3, 3)], 2.0 * 0.5 * 2.0);
        assert_eq!(m.d[(5, 5)], 2.0 * 0.5 * 1.0);
        assert_eq!(m.d.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn drift_is_stable_on_sample_grid() {
        for n in [2usize, 5, 11] {
            for nu in [0.5_f64, 1.0, 2.0] {
                for kappa in [0.0, 0.1, 1.0] {
                    let p = ChainParams::natural(n, nu.sqrt(), 1.0, kappa, 0.0, 2.0, 1.0).unwrap();
                    let rep = check_drift_stability(&p.struct_matrices().b).unwrap();
                    assert!(rep.stable, "N={n} nu={nu} kappa={kappa}");
                    assert!(rep.spectral_abscissa < 0.0);
                }
            }
        }
    }

    #[test]
    fn sign_flipped_drift_reported_unstable() {
        let p = fixture();
        let b = -p.struct_matrices().b;
        let rep = check_drift_stability(&b).unwrap();
        assert!(!rep.stable);
        assert!(rep.spectral_abscissa > 0.0);
    }
}
