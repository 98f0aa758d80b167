//! Stochastic validation of the analytic covariances.
//!
//! Everything here samples the chain's Langevin dynamics with an
//! Euler–Maruyama scheme and estimates stationary moments from batch means:
//! the post-burn-in window of every trajectory is cut into `batch_count`
//! equal slices, each slice contributes one (approximately independent)
//! mean, and the pooled slices give both the estimate and its standard
//! error.  Three estimators are provided:
//!
//! * [`estimate_stationary_covariance`] — plain covariance of `(q, p)`;
//! * [`estimate_first_order_fd`] — finite-difference derivative
//!   `(Φ̂^λ - Φ̂⁰)/λ` with common random numbers: both arms replay the same
//!   noise stream, so the statistical error of the difference is far below
//!   that of either arm;
//! * [`validate_covariance_formula`] — a pathwise check of the
//!   covariance representation through the linearised (Malliavin) flow,
//!   with a nested inner ensemble for the conditional-expectation form.
//!
//! All randomness comes from counter-based ChaCha streams keyed by
//! `(seed, trajectory)`, so results are bitwise reproducible regardless of
//! thread scheduling; parallel reductions collect per-trajectory results
//! first and combine them in a fixed order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainParams, ChainState};
use crate::harmonic;
use crate::linalg::{matrix_exp, max_norm};
use crate::lyapunov::{linear_malliavin_expectation, noise_vectors};
use crate::{ChainError, Result};

/// Trajectories whose phase-space entries exceed this are reported as
/// diverged (time step too large for the potential well explored).
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Simulation budget and discretisation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Euler–Maruyama time step; must not exceed [`max_stable_dt`].
    pub dt: f64,
    /// Discarded equilibration window per trajectory.
    pub t_burn: f64,
    /// Sampled window per trajectory (after burn-in).
    pub t_total: f64,
    /// Number of independent trajectories.
    pub n_traj: usize,
    /// Master seed; every trajectory derives its own ChaCha stream from it.
    pub seed: u64,
    /// Time slices per trajectory used for the batch-means error bar.
    #[serde(default = "default_batch_count")]
    pub batch_count: usize,
}

fn default_batch_count() -> usize {
    8
}

impl SimConfig {
    /// Checks internal consistency and the step-size bound for `params`.
    pub fn validate(&self, params: &ChainParams) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ChainError::Config(format!("dt = {} must be > 0", self.dt)));
        }
        if self.t_burn < 0.0 || !self.t_burn.is_finite() {
            return Err(ChainError::Config(format!(
                "t_burn = {} must be ≥ 0",
                self.t_burn
            )));
        }
        if !(self.t_total > 0.0) || !self.t_total.is_finite() {
            return Err(ChainError::Config(format!(
                "t_total = {} must be > 0",
                self.t_total
            )));
        }
        if self.n_traj == 0 {
            return Err(ChainError::Config("n_traj must be ≥ 1".into()));
        }
        if self.batch_count < 8 {
            return Err(ChainError::Config(format!(
                "batch_count = {} is too small: at least 8 batches are needed for a usable error bar",
                self.batch_count
            )));
        }
        let dt_max = max_stable_dt(params);
        if self.dt > dt_max {
            return Err(ChainError::Config(format!(
                "dt = {} exceeds the stability bound {dt_max:.3e} for these parameters",
                self.dt
            )));
        }
        if self.batch_steps() == 0 {
            return Err(ChainError::Config(format!(
                "t_total = {} at dt = {} leaves no full batch for batch_count = {}",
                self.t_total, self.dt, self.batch_count
            )));
        }
        Ok(())
    }

    /// Steps per batch (the sampled window is truncated to a whole number
    /// of batches).
    pub fn batch_steps(&self) -> usize {
        ((self.t_total / self.dt).round() as usize) / self.batch_count
    }

    /// Burn-in steps.
    pub fn burn_steps(&self) -> usize {
        (self.t_burn / self.dt).round() as usize
    }
}

/// Conservative Euler–Maruyama step bound:
/// `0.01 · min(1/γ, 1/ω, 1/ω_eff)` where
/// `ω_eff = sqrt(ω²(4+κ) + 3λ q_g²)` is the stiffest curvature the
/// trajectory plausibly visits (`q_g` is three standard deviations of the
/// widest harmonic site).
pub fn max_stable_dt(params: &ChainParams) -> f64 {
    let g_max = harmonic::g_vector(params.n, params.kappa)
        .into_iter()
        .fold(0.0_f64, f64::max);
    let t_hot = params.t1.max(params.tn);
    let q_guard = 3.0 * (params.k_b * t_hot * g_max).sqrt() / params.omega;
    let w2 = params.omega * params.omega;
    let w_eff = (w2 * (4.0 + params.kappa) + 3.0 * params.lambda * q_guard * q_guard).sqrt();
    0.01 * (1.0 / params.gamma).min(1.0 / params.omega).min(1.0 / w_eff)
}

/// Rule-of-thumb equilibration window, `(20/γ)·max(1, 1/α)`.  Long unpinned
/// chains mix slower than this (boundary-only damping); scale up with `N`
/// when in doubt.
pub fn suggested_burn_in(params: &ChainParams) -> f64 {
    let alpha = params.derived().alpha;
    20.0 / params.gamma * (1.0_f64).max(1.0 / alpha)
}

// ---------------------------------------------------------------------------
// integrator core
// ---------------------------------------------------------------------------

/// Adds `dt · drift` to `(q, p)` using `f` as force scratch.  Kept separate
/// from the noise injection so it can be checked against
/// [`ChainParams::drift_field`] directly.
fn add_drift(params: &ChainParams, w2: f64, q: &mut [f64], p: &mut [f64], f: &mut [f64], dt: f64) {
    let n = q.len();
    for i in 0..n {
        let left = if i > 0 { q[i - 1] } else { 0.0 };
        let right = if i + 1 < n { q[i + 1] } else { 0.0 };
        let qi = q[i];
        let mut fi = -w2 * ((2.0 + params.kappa) * qi - left - right) - params.lambda * qi * qi * qi;
        if i == 0 || i == n - 1 {
            fi -= params.gamma * p[i];
        }
        f[i] = fi;
    }
    for i in 0..n {
        q[i] += dt * p[i];
    }
    for i in 0..n {
        p[i] += dt * f[i];
    }
}

/// One Euler–Maruyama step; the two bath kicks are always drawn in the same
/// order so paired runs consume identical noise sequences.
fn em_step(
    params: &ChainParams,
    w2: f64,
    q: &mut [f64],
    p: &mut [f64],
    f: &mut [f64],
    dt: f64,
    amp1: f64,
    ampn: f64,
    rng: &mut ChaCha8Rng,
) {
    add_drift(params, w2, q, p, f, dt);
    let z1: f64 = StandardNormal.sample(rng);
    let zn: f64 = StandardNormal.sample(rng);
    p[0] += amp1 * z1;
    let n = p.len();
    p[n - 1] += ampn * zn;
}

fn check_guard(q: &[f64], p: &[f64], t: f64) -> Result<()> {
    let mut worst = 0.0_f64;
    for &v in q.iter().chain(p.iter()) {
        worst = worst.max(v.abs());
    }
    if !worst.is_finite() || worst > DIVERGENCE_GUARD {
        return Err(ChainError::Diverged { t, norm: worst });
    }
    Ok(())
}

fn noise_amplitudes(params: &ChainParams, dt: f64) -> (f64, f64) {
    let c = 2.0 * params.gamma * params.k_b * dt;
    ((c * params.t1).sqrt(), (c * params.tn).sqrt())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-batch record: time-averaged second moment and mean of `(q, p)`.
struct BatchStat {
    second: DMatrix<f64>,
    mean: DVector<f64>,
}

/// Runs one trajectory and returns its batch statistics.
fn covariance_batches(params: &ChainParams, config: &SimConfig, stream: u64) -> Result<Vec<BatchStat>> {
    let n = params.n;
    let dim = 2 * n;
    let w2 = params.omega * params.omega;
    let dt = config.dt;
    let (amp1, ampn) = noise_amplitudes(params, dt);
    let mut rng = stream_rng(config.seed, stream);
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut t = 0.0;

    for _ in 0..config.burn_steps() {
        em_step(params, w2, &mut q, &mut p, &mut f, dt, amp1, ampn, &mut rng);
        t += dt;
        check_guard(&q, &p, t)?;
    }

    let batch_steps = config.batch_steps();
    let mut batches = Vec::with_capacity(config.batch_count);
    for _ in 0..config.batch_count {
        let mut second = DMatrix::zeros(dim, dim);
        let mut mean = DVector::zeros(dim);
        for _ in 0..batch_steps {
            em_step(params, w2, &mut q, &mut p, &mut f, dt, amp1, ampn, &mut rng);
            t += dt;
            check_guard(&q, &p, t)?;
            for a in 0..dim {
                let xa = if a < n { q[a] } else { p[a - n] };
                mean[a] += xa;
                for b in a..dim {
                    let xb = if b < n { q[b] } else { p[b - n] };
                    second[(a, b)] += xa * xb;
                }
            }
        }
        let inv = 1.0 / batch_steps as f64;
        mean *= inv;
        second *= inv;
        for a in 0..dim {
            for b in 0..a {
                second[(a, b)] = second[(b, a)];
            }
        }
        batches.push(BatchStat { second, mean });
    }
    Ok(batches)
}

/// Pooled estimate with a batch-means error bar.
#[derive(Debug, Clone)]
pub struct SimEstimate {
    /// Estimated stationary covariance (second moments recentred about the
    /// pooled mean).
    pub mean: DMatrix<f64>,
    /// Entrywise standard error from the spread of the batch means.
    pub stderr: DMatrix<f64>,
    /// Number of batches pooled into the estimate.
    pub effective_samples: usize,
}

fn combine_batches(batches: &[BatchStat], dim: usize) -> SimEstimate {
    let k = batches.len();
    let mut m_bar = DVector::zeros(dim);
    for b in batches {
        m_bar += &b.mean;
    }
    m_bar /= k as f64;
    // Recentring about the pooled mean: C_b = S_b - m_b m̄ᵀ - m̄ m_bᵀ + m̄ m̄ᵀ,
    // whose average is S̄ - m̄ m̄ᵀ.
    let centred: Vec<DMatrix<f64>> = batches
        .iter()
        .map(|b| {
            &b.second - &b.mean * m_bar.transpose() - &m_bar * b.mean.transpose()
                + &m_bar * m_bar.transpose()
        })
        .collect();
    let mut mean = DMatrix::zeros(dim, dim);
    for c in &centred {
        mean += c;
    }
    mean /= k as f64;
    let mut var = DMatrix::zeros(dim, dim);
    for c in &centred {
        let d = c - &mean;
        var += d.component_mul(&d);
    }
    let denom = (k.max(2) - 1) as f64 * k as f64;
    let stderr = var.map(|v| (v / denom).sqrt());
    SimEstimate {
        mean,
        stderr,
        effective_samples: k,
    }
}

/// Estimates the stationary covariance of `(q, p)` by ensemble- and
/// time-averaging.  Deterministic for a fixed config, independent of thread
/// count.
pub fn estimate_stationary_covariance(
    params: &ChainParams,
    config: &SimConfig,
) -> Result<SimEstimate> {
    config.validate(params)?;
    let per: Vec<Result<Vec<BatchStat>>> = (0..config.n_traj)
        .into_par_iter()
        .map(|traj| covariance_batches(params, config, traj as u64))
        .collect();
    let mut all = Vec::new();
    for r in per {
        all.extend(r?);
    }
    Ok(combine_batches(&all, 2 * params.n))
}

/// Finite-difference estimate of `dΦ/dλ` at `λ = 0`.
#[derive(Debug, Clone)]
pub struct FdEstimate {
    /// Probe coupling of the perturbed arm.
    pub lambda_probe: f64,
    /// Estimated derivative `(Φ̂^λ - Φ̂⁰)/λ`.
    pub mean: DMatrix<f64>,
    /// Entrywise standard error of the paired difference.
    pub stderr: DMatrix<f64>,
    /// Number of paired batches.
    pub effective_samples: usize,
}

/// Runs the coupled two-arm experiment: for every trajectory the `λ = 0`
/// and `λ = lambda_probe` systems replay the identical noise stream, and
/// the derivative is estimated from the paired batch differences.  The
/// `lambda` field of `params` is ignored; the base arm is always harmonic.
pub fn estimate_first_order_fd(
    params: &ChainParams,
    lambda_probe: f64,
    config: &SimConfig,
) -> Result<FdEstimate> {
    if !(lambda_probe > 0.0) || !lambda_probe.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "lambda_probe = {lambda_probe} must be > 0"
        )));
    }
    let mut base = params.clone();
    base.lambda = 0.0;
    let mut probe = params.clone();
    probe.lambda = lambda_probe;
    // The probe arm has the stricter step bound.
    config.validate(&probe)?;

    let per: Vec<Result<(Vec<BatchStat>, Vec<BatchStat>)>> = (0..config.n_traj)
        .into_par_iter()
        .map(|traj| {
            let b = covariance_batches(&base, config, traj as u64)?;
            let p = covariance_batches(&probe, config, traj as u64)?;
            Ok((b, p))
        })
        .collect();
    let mut base_batches = Vec::new();
    let mut probe_batches = Vec::new();
    for r in per {
        let (b, p) = r?;
        base_batches.extend(b);
        probe_batches.extend(p);
    }
    let dim = 2 * params.n;
    let base_est = combine_batches(&base_batches, dim);
    let probe_est = combine_batches(&probe_batches, dim);

    // Paired differences need the per-batch centred matrices of both arms.
    let centre = |batches: &[BatchStat]| -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let mut m_bar = DVector::zeros(dim);
        for b in batches {
            m_bar += &b.mean;
        }
        m_bar /= batches.len() as f64;
        let cs = batches
            .iter()
            .map(|b| {
                &b.second - &b.mean * m_bar.transpose() - &m_bar * b.mean.transpose()
                    + &m_bar * m_bar.transpose()
            })
            .collect();
        (m_bar, cs)
    };
    let (_, base_c) = centre(&base_batches);
    let (_, probe_c) = centre(&probe_batches);
    let k = base_c.len();
    let diffs: Vec<DMatrix<f64>> = base_c
        .iter()
        .zip(&probe_c)
        .map(|(b, p)| (p - b) / lambda_probe)
        .collect();
    let mut mean = DMatrix::zeros(dim, dim);
    for d in &diffs {
        mean += d;
    }
    mean /= k as f64;
    let mut var = DMatrix::zeros(dim, dim);
    for d in &diffs {
        let e = d - &mean;
        var += e.component_mul(&e);
    }
    let denom = (k.max(2) - 1) as f64 * k as f64;
    let stderr = var.map(|v| (v / denom).sqrt());
    // Keep the arms' estimates alive in debug assertions: their difference
    // over lambda should agree with the paired mean.
    debug_assert!(
        max_norm(&(((&probe_est.mean - &base_est.mean) / lambda_probe) - &mean)) < 1e-10
    );
    Ok(FdEstimate {
        lambda_probe,
        mean,
        stderr,
        effective_samples: k,
    })
}

// ---------------------------------------------------------------------------
// linearised flow
// ---------------------------------------------------------------------------

/// Applies the linearised drift `A(q) = b - 3λ C(q)`, with
/// `C(q) = [[0, 0], [diag(q²), 0]]`, to every column of `m`.
fn apply_linearized_drift(
    params: &ChainParams,
    w2: f64,
    q: &[f64],
    m: &DMatrix<f64>,
    out: &mut DMatrix<f64>,
) {
    let n = q.len();
    for col in 0..m.ncols() {
        for i in 0..n {
            out[(i, col)] = m[(n + i, col)];
        }
        for i in 0..n {
            let left = if i > 0 { m[(i - 1, col)] } else { 0.0 };
            let right = if i + 1 < n { m[(i + 1, col)] } else { 0.0 };
            let mut v = -w2 * ((2.0 + params.kappa) * m[(i, col)] - left - right)
                - 3.0 * params.lambda * q[i] * q[i] * m[(i, col)];
            if i == 0 || i == n - 1 {
                v -= params.gamma * m[(n + i, col)];
            }
            out[(n + i, col)] = v;
        }
    }
}

/// Outcome of propagating the tangent flow `dU = A(x_t)U dt` along one
/// trajectory.
#[derive(Debug, Clone)]
pub struct FlowProbe {
    /// Propagation horizon actually integrated.
    pub t: f64,
    /// Steps taken.
    pub steps: usize,
    /// `ln |det U(t)|` from an LU factorisation.
    pub log_det: f64,
    /// Exact value `tr(b)·t = -2γt` — the quartic term is trace-free, so
    /// phase-space volume contracts at the bath rate regardless of `λ`.
    pub log_det_expected: f64,
}

/// Integrates the linearised flow alongside one sampled trajectory and
/// compares its volume contraction with the exact trace law.
pub fn propagate_linearized_flow(
    params: &ChainParams,
    config: &SimConfig,
    t_max: f64,
) -> Result<FlowProbe> {
    config.validate(params)?;
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "t_max = {t_max} must be > 0"
        )));
    }
    let n = params.n;
    let dim = 2 * n;
    let w2 = params.omega * params.omega;
    let dt = config.dt;
    let steps = (t_max / dt).round().max(1.0) as usize;
    let (amp1, ampn) = noise_amplitudes(params, dt);
    let mut rng = stream_rng(config.seed, u64::MAX);
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut u = DMatrix::<f64>::identity(dim, dim);
    let mut au = DMatrix::zeros(dim, dim);
    let mut aau = DMatrix::zeros(dim, dim);
    let mut t = 0.0;
    for _ in 0..steps {
        // Second-order update U ← (I + dtA + dt²A²/2)U keeps the volume
        // error at O(dt²) per unit time; A is evaluated at the pre-step
        // state, consistent with the Euler–Maruyama path.
        apply_linearized_drift(params, w2, &q, &u, &mut au);
        apply_linearized_drift(params, w2, &q, &au, &mut aau);
        u += &au * dt + &aau * (0.5 * dt * dt);
        em_step(params, w2, &mut q, &mut p, &mut f, dt, amp1, ampn, &mut rng);
        t += dt;
        check_guard(&q, &p, t)?;
    }
    let lu = u.full_piv_lu();
    let mut log_det = 0.0;
    for i in 0..dim {
        log_det += lu.u()[(i, i)].abs().ln();
    }
    Ok(FlowProbe {
        t,
        steps,
        log_det,
        log_det_expected: -2.0 * params.gamma * t,
    })
}

/// Deterministic harmonic anchor of the covariance representation:
/// `Φ⁰ - e^{bt} Φ⁰ e^{bᵀt}` must equal the noise quadrature
/// `∫₀ᵗ e^{bs} D e^{bᵀs} ds`.  Returns the max-norm difference.
pub fn linear_flow_check(params: &ChainParams, t: f64, steps: usize) -> Result<f64> {
    if params.lambda != 0.0 {
        return Err(ChainError::InvalidParameter(
            "the closed-form flow identity only holds for the harmonic chain (λ = 0)".into(),
        ));
    }
    let sm = params.struct_matrices();
    let phi0 = harmonic::assemble_phi0(params)?.assembled();
    let e = matrix_exp(&(&sm.b * t));
    let lhs = &phi0 - &e * &phi0 * e.transpose();
    let rhs = linear_malliavin_expectation(&sm.b, &noise_vectors(params), t, steps)?;
    Ok(max_norm(&(lhs - rhs)))
}

// ---------------------------------------------------------------------------
// pathwise covariance representation
// ---------------------------------------------------------------------------

/// Comparison of three routes to `Cov(x_t)` for a chain started at the
/// origin.
///
/// With `v_k(s) = U(t←s) X_k` (tangent flow applied to the noise columns),
/// the Clark–Ocone decomposition gives the exact representation
///
/// ```text
/// Cov(x_t) = ∫₀ᵗ Σ_k E[ E[v_k(s) | ℱ_s] E[v_k(s) | ℱ_s]ᵀ ] ds
/// ```
///
/// while dropping the conditioning yields the Poincaré-type upper bound
/// `Cov(x_t) ⪯ ∫₀ᵗ Σ_k E[v_k v_kᵀ] ds`.  For `λ = 0` the tangents are
/// deterministic and both sides collapse to the same quadrature.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Horizon actually integrated.
    pub t: f64,
    /// Quartic coupling of the validated dynamics.
    pub lambda: f64,
    /// Outer trajectories / inner continuations per conditioning point.
    pub n_outer: usize,
    pub n_inner: usize,
    /// Direct covariance estimate of `x_t`.
    pub lhs: DMatrix<f64>,
    pub lhs_stderr: DMatrix<f64>,
    /// Conditional (equality) side, inner products debiased by the
    /// U-statistic correction `m̄m̄ᵀ - Ŝ/M`.
    pub rhs_conditional: DMatrix<f64>,
    pub rhs_conditional_stderr: DMatrix<f64>,
    /// Unconditional (upper-bound) side.
    pub rhs_unconditional: DMatrix<f64>,
    pub rhs_unconditional_stderr: DMatrix<f64>,
    /// Largest entrywise `|lhs - rhs_conditional| / σ` — the equality test
    /// statistic.
    pub equality_gap_over_sigma: f64,
    /// Smallest eigenvalue of `rhs_unconditional - lhs` (should be ≥ 0 up
    /// to noise) and the standard error of its quadratic form.
    pub psd_min_eigenvalue: f64,
    pub psd_min_stderr: f64,
    /// Share of the conditional signal that the inner-variance correction
    /// removed; large values mean `n_inner` is too small to trust the
    /// debiased product.
    pub inner_noise_fraction: f64,
    /// Set when `inner_noise_fraction > 0.3`.
    pub inner_noise_flag: bool,
}

struct OuterRecord {
    outer_product: DMatrix<f64>,
    endpoint: DVector<f64>,
    cond: DMatrix<f64>,
    uncond: DMatrix<f64>,
    noise_num: f64,
    noise_den: f64,
}

fn branch_stream(outer: usize, panel: usize, branch: usize) -> u64 {
    ((outer as u64) << 32) | ((panel as u64) << 16) | branch as u64
}

fn main_stream(outer: usize) -> u64 {
    ((outer as u64) << 32) | 0xFFFF_FFFF
}

#[allow(clippy::too_many_arguments)]
fn outer_trajectory(
    params: &ChainParams,
    config: &SimConfig,
    outer: usize,
    steps_total: usize,
    panel_index: &[usize],
    n_inner: usize,
    sigma: &[DVector<f64>],
) -> Result<OuterRecord> {
    let n = params.n;
    let dim = 2 * n;
    let w2 = params.omega * params.omega;
    let dt = config.dt;
    let (amp1, ampn) = noise_amplitudes(params, dt);

    // Main path, with snapshots at the conditioning points.
    let mut rng = stream_rng(config.seed, main_stream(outer));
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut snapshots = Vec::with_capacity(panel_index.len());
    let mut t = 0.0;
    for step in 0..=steps_total {
        if panel_index.contains(&step) {
            snapshots.push((q.clone(), p.clone()));
        }
        if step < steps_total {
            em_step(params, w2, &mut q, &mut p, &mut f, dt, amp1, ampn, &mut rng);
            t += dt;
            check_guard(&q, &p, t)?;
        }
    }
    let endpoint = DVector::from_fn(dim, |a, _| if a < n { q[a] } else { p[a - n] });
    let outer_product = &endpoint * endpoint.transpose();

    // Trapezoid weights on the (slightly non-uniform) conditioning grid.
    let mut weights = vec![0.0; panel_index.len()];
    for j in 0..panel_index.len() {
        let prev = if j == 0 { panel_index[0] } else { panel_index[j - 1] };
        let next = if j + 1 == panel_index.len() {
            panel_index[j]
        } else {
            panel_index[j + 1]
        };
        weights[j] = dt * (next - prev) as f64 * 0.5;
    }

    let mut cond = DMatrix::zeros(dim, dim);
    let mut uncond = DMatrix::zeros(dim, dim);
    let mut noise_num = 0.0;
    let mut noise_den = 0.0;
    let mut tangents = vec![DVector::<f64>::zeros(dim); sigma.len()];
    let mut scratch = DVector::<f64>::zeros(dim);

    for (j, (&idx, (q0, p0))) in panel_index.iter().zip(&snapshots).enumerate() {
        let remaining = steps_total - idx;
        let mut sum_v = vec![DVector::<f64>::zeros(dim); sigma.len()];
        let mut sum_vv = vec![DMatrix::<f64>::zeros(dim, dim); sigma.len()];
        for branch in 0..n_inner {
            let mut rng_b = stream_rng(config.seed, branch_stream(outer, j, branch));
            let mut qb = q0.clone();
            let mut pb = p0.clone();
            for (k, s) in sigma.iter().enumerate() {
                tangents[k].copy_from(s);
            }
            let mut tb = idx as f64 * dt;
            for _ in 0..remaining {
                // Tangents use the pre-step state — the exact derivative of
                // the Euler-Maruyama map.
                for v in tangents.iter_mut() {
                    apply_tangent(params, w2, &qb, v, &mut scratch);
                    *v += &scratch * dt;
                }
                em_step(params, w2, &mut qb, &mut pb, &mut f, dt, amp1, ampn, &mut rng_b);
                tb += dt;
                check_guard(&qb, &pb, tb)?;
            }
            for (k, v) in tangents.iter().enumerate() {
                sum_v[k] += v;
                sum_vv[k] += v * v.transpose();
            }
        }
        let m = n_inner as f64;
        for k in 0..sigma.len() {
            let mean_v = &sum_v[k] / m;
            let mean_vv = &sum_vv[k] / m;
            // Sample covariance of the inner ensemble.
            let cov = (&mean_vv - &mean_v * mean_v.transpose()) * (m / (m - 1.0));
            let debias = &cov / m;
            cond += (&mean_v * mean_v.transpose() - &debias) * weights[j];
            uncond += &mean_vv * weights[j];
            noise_num += weights[j] * debias.trace();
            noise_den += weights[j] * (&mean_v * mean_v.transpose()).trace();
        }
    }
    Ok(OuterRecord {
        outer_product,
        endpoint,
        cond,
        uncond,
        noise_num,
        noise_den,
    })
}

/// Applies the linearised drift to a single vector.
fn apply_tangent(
    params: &ChainParams,
    w2: f64,
    q: &[f64],
    v: &DVector<f64>,
    out: &mut DVector<f64>,
) {
    let n = q.len();
    for i in 0..n {
        out[i] = v[n + i];
    }
    for i in 0..n {
        let left = if i > 0 { v[i - 1] } else { 0.0 };
        let right = if i + 1 < n { v[i + 1] } else { 0.0 };
        let mut acc = -w2 * ((2.0 + params.kappa) * v[i] - left - right)
            - 3.0 * params.lambda * q[i] * q[i] * v[i];
        if i == 0 || i == n - 1 {
            acc -= params.gamma * v[n + i];
        }
        out[n + i] = acc;
    }
}

/// Runs the three-way covariance-representation comparison at horizon `t`.
///
/// `config.n_traj` outer trajectories start at the origin; the time integral
/// uses `config.batch_count` panels, and every conditioning point branches
/// `n_inner` inner continuations.
pub fn validate_covariance_formula(
    params: &ChainParams,
    config: &SimConfig,
    t: f64,
    n_inner: usize,
) -> Result<ValidationReport> {
    config.validate(params)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(ChainError::InvalidParameter(format!("t = {t} must be > 0")));
    }
    if n_inner < 2 {
        return Err(ChainError::Config(
            "n_inner must be ≥ 2 for the debiased conditional product".into(),
        ));
    }
    if config.n_traj < 2 {
        return Err(ChainError::Config(
            "the validation needs at least two outer trajectories".into(),
        ));
    }
    let panels = config.batch_count;
    let steps_total = (t / config.dt).round().max(1.0) as usize;
    if steps_total < panels {
        return Err(ChainError::Config(format!(
            "t = {t} at dt = {} gives {steps_total} steps — fewer than the {panels} conditioning panels",
            config.dt
        )));
    }
    let panel_index: Vec<usize> = (0..=panels).map(|j| j * steps_total / panels).collect();
    let sigma = noise_vectors(params);
    let dim = 2 * params.n;
    let actual_t = steps_total as f64 * config.dt;

    let records: Vec<Result<OuterRecord>> = (0..config.n_traj)
        .into_par_iter()
        .map(|outer| {
            outer_trajectory(
                params,
                config,
                outer,
                steps_total,
                &panel_index,
                n_inner,
                &sigma,
            )
        })
        .collect();
    let mut recs = Vec::with_capacity(config.n_traj);
    for r in records {
        recs.push(r?);
    }
    let m = recs.len() as f64;

    let mean_of = |f: &dyn Fn(&OuterRecord) -> &DMatrix<f64>| -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(dim, dim);
        for r in &recs {
            acc += f(r);
        }
        acc / m
    };
    let stderr_of = |f: &dyn Fn(&OuterRecord) -> &DMatrix<f64>, mean: &DMatrix<f64>| {
        let mut var = DMatrix::zeros(dim, dim);
        for r in &recs {
            let d = f(r) - mean;
            var += d.component_mul(&d);
        }
        var.map(|v| (v / ((m - 1.0) * m)).sqrt())
    };

    let raw_second = mean_of(&|r| &r.outer_product);
    let second_err = stderr_of(&|r| &r.outer_product, &raw_second);
    // Debiased recentring: E[m̄m̄ᵀ] = μμᵀ + Σ/M, so subtract m̄m̄ᵀ - Ŝ/M.
    let mut mean_x = DVector::zeros(dim);
    for r in &recs {
        mean_x += &r.endpoint;
    }
    mean_x /= m;
    let mut cov_x = DMatrix::zeros(dim, dim);
    for r in &recs {
        let d = &r.endpoint - &mean_x;
        cov_x += &d * d.transpose();
    }
    cov_x /= m - 1.0;
    let lhs = &raw_second - (&mean_x * mean_x.transpose() - &cov_x / m);
    let lhs_stderr = second_err;

    let rhs_conditional = mean_of(&|r| &r.cond);
    let rhs_conditional_stderr = stderr_of(&|r| &r.cond, &rhs_conditional);
    let rhs_unconditional = mean_of(&|r| &r.uncond);
    let rhs_unconditional_stderr = stderr_of(&|r| &r.uncond, &rhs_unconditional);

    let scale = max_norm(&lhs).max(max_norm(&rhs_conditional));
    let mut equality_gap_over_sigma = 0.0_f64;
    for a in 0..dim {
        for b in 0..dim {
            let gap = (lhs[(a, b)] - rhs_conditional[(a, b)]).abs();
            let s = lhs_stderr[(a, b)].hypot(rhs_conditional_stderr[(a, b)]);
            let floor = 1e-12 * scale.max(1e-300);
            equality_gap_over_sigma = equality_gap_over_sigma.max(gap / s.max(floor));
        }
    }

    let gap_matrix = {
        let g = &rhs_unconditional - &lhs;
        (&g + g.transpose()) * 0.5
    };
    let eig = gap_matrix.clone().symmetric_eigen();
    let mut min_idx = 0;
    for i in 0..dim {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let psd_min_eigenvalue = eig.eigenvalues[min_idx];
    let u = eig.eigenvectors.column(min_idx).into_owned();
    let samples: Vec<f64> = recs
        .iter()
        .map(|r| (u.transpose() * (&r.uncond - &r.outer_product) * &u)[(0, 0)])
        .collect();
    let s_mean = samples.iter().sum::<f64>() / m;
    let s_var = samples.iter().map(|v| (v - s_mean).powi(2)).sum::<f64>() / (m - 1.0);
    let psd_min_stderr = (s_var / m).sqrt();

    let noise_num: f64 = recs.iter().map(|r| r.noise_num).sum();
    let noise_den: f64 = recs.iter().map(|r| r.noise_den).sum();
    let inner_noise_fraction = if noise_den.abs() > 0.0 {
        (noise_num / noise_den).abs()
    } else {
        0.0
    };

    Ok(ValidationReport {
        t: actual_t,
        lambda: params.lambda,
        n_outer: recs.len(),
        n_inner,
        lhs,
        lhs_stderr,
        rhs_conditional,
        rhs_conditional_stderr,
        rhs_unconditional,
        rhs_unconditional_stderr,
        equality_gap_over_sigma,
        psd_min_eigenvalue,
        psd_min_stderr,
        inner_noise_fraction,
        inner_noise_flag: inner_noise_fraction > 0.3,
    })
}

/// Convenience: one Euler–Maruyama trajectory, returning the endpoint.
/// Mostly useful for examples and smoke tests.
pub fn integrate(
    params: &ChainParams,
    config: &SimConfig,
    t_end: f64,
    stream: u64,
) -> Result<ChainState> {
    config.validate(params)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "t_end = {t_end} must be > 0"
        )));
    }
    let n = params.n;
    let w2 = params.omega * params.omega;
    let dt = config.dt;
    let steps = (t_end / dt).round().max(1.0) as usize;
    let (amp1, ampn) = noise_amplitudes(params, dt);
    let mut rng = stream_rng(config.seed, stream);
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut t = 0.0;
    for _ in 0..steps {
        em_step(params, w2, &mut q, &mut p, &mut f, dt, amp1, ampn, &mut rng);
        t += dt;
        check_guard(&q, &p, t)?;
    }
    Ok(ChainState {
        q: DVector::from_vec(q),
        p: DVector::from_vec(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainParams;
    use crate::perturbation;
    use approx::assert_abs_diff_eq;

    fn base_config(dt: f64, t_burn: f64, t_total: f64, n_traj: usize, seed: u64) -> SimConfig {
        SimConfig {
            dt,
            t_burn,
            t_total,
            n_traj,
            seed,
            batch_count: 8,
        }
    }

    #[test]
    fn config_validation_rejects_bad_input() {
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let good = base_config(0.004, 1.0, 10.0, 2, 1);
        assert!(good.validate(&params).is_ok());

        let mut c = good.clone();
        c.dt = 0.05; // way above the 0.01/ω_eff bound
        assert!(matches!(c.validate(&params), Err(ChainError::Config(_))));
        let mut c = good.clone();
        c.batch_count = 4;
        assert!(matches!(c.validate(&params), Err(ChainError::Config(_))));
        let mut c = good.clone();
        c.n_traj = 0;
        assert!(matches!(c.validate(&params), Err(ChainError::Config(_))));
        let mut c = good.clone();
        c.t_total = 0.0;
        assert!(matches!(c.validate(&params), Err(ChainError::Config(_))));
        let mut c = good;
        c.t_total = 0.02; // fewer steps than batches
        assert!(matches!(c.validate(&params), Err(ChainError::Config(_))));
    }

    #[test]
    fn drift_step_matches_drift_field() {
        let params = ChainParams::natural(4, 1.2, 0.8, 0.3, 0.9, 1.1, 0.9).unwrap();
        let w2 = params.omega * params.omega;
        let mut q = vec![0.3, -0.2, 0.5, -0.1];
        let mut p = vec![-0.4, 0.1, 0.2, 0.6];
        let state = ChainState {
            q: DVector::from_vec(q.clone()),
            p: DVector::from_vec(p.clone()),
        };
        let dt = 1e-3;
        let expected = state.to_flat() + params.drift_field(&state) * dt;
        let mut f = vec![0.0; 4];
        add_drift(&params, w2, &mut q, &mut p, &mut f, dt);
        for i in 0..4 {
            assert_abs_diff_eq!(q[i], expected[i], epsilon = 1e-14);
            assert_abs_diff_eq!(p[i], expected[4 + i], epsilon = 1e-14);
        }
    }

    #[test]
    fn equilibrium_covariance_matches_gibbs() {
        // Equal baths: Φ⁰ is the Gibbs matrix kT[[𝒢⁻¹/ω², 0], [0, I]].
        let params = ChainParams::natural(2, 1.0, 1.0, 0.3, 0.0, 1.0, 1.0).unwrap();
        let config = base_config(0.004, 30.0, 300.0, 4, 42);
        let est = estimate_stationary_covariance(&params, &config).unwrap();
        let exact = harmonic::assemble_phi0(&params).unwrap().assembled();
        for a in 0..4 {
            for b in 0..4 {
                let gap = (est.mean[(a, b)] - exact[(a, b)]).abs();
                let tol = (5.0 * est.stderr[(a, b)]).max(0.08);
                assert!(
                    gap < tol,
                    "entry ({a},{b}): est {} vs exact {} (stderr {})",
                    est.mean[(a, b)],
                    exact[(a, b)],
                    est.stderr[(a, b)]
                );
            }
        }
        assert_eq!(est.effective_samples, 4 * 8);
    }

    #[test]
    fn estimates_are_reproducible_and_seed_sensitive() {
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.4, 1.2, 0.8).unwrap();
        let config = base_config(0.0025, 5.0, 40.0, 2, 7);
        let a = estimate_stationary_covariance(&params, &config).unwrap();
        let b = estimate_stationary_covariance(&params, &config).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
        let mut other = config;
        other.seed = 8;
        let c = estimate_stationary_covariance(&params, &other).unwrap();
        assert!(max_norm(&(&a.mean - &c.mean)) > 0.0);
    }

    #[test]
    fn fd_estimate_tracks_dense_first_order() {
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.0, 1.3, 0.7).unwrap();
        let config = base_config(0.003, 30.0, 300.0, 4, 11);
        // Two probe couplings and Richardson extrapolation 2·FD(λ/2)-FD(λ)
        // cancel the O(λ) truncation of the difference quotient; what is
        // left is O(λ²) plus the (CRN-suppressed) statistical error.
        let coarse = estimate_first_order_fd(&params, 0.1, &config).unwrap();
        let fine = estimate_first_order_fd(&params, 0.05, &config).unwrap();
        let extrap = &fine.mean * 2.0 - &coarse.mean;
        let dense = perturbation::solve_first_order_dense(&params).unwrap().phi1_full();
        let scale = max_norm(&dense);
        for a in 0..4 {
            for b in 0..4 {
                let gap = (extrap[(a, b)] - dense[(a, b)]).abs();
                let sigma = (2.0 * fine.stderr[(a, b)]).hypot(coarse.stderr[(a, b)]);
                let tol = (8.0 * sigma).max(0.08 * scale);
                assert!(
                    gap < tol,
                    "entry ({a},{b}): extrapolated fd {} vs dense {} (sigma {sigma:.3e})",
                    extrap[(a, b)],
                    dense[(a, b)]
                );
            }
        }
        // The raw coarse estimate must at least get the sign and rough
        // size of the dominant entries right.
        assert!(coarse.mean[(0, 0)] < 0.0 && dense[(0, 0)] < 0.0);
    }

    #[test]
    fn flow_log_determinant_matches_trace_law() {
        let params = ChainParams::natural(2, 1.0, 1.0, 0.1, 0.3, 1.0, 1.0).unwrap();
        let config = base_config(0.001, 0.0, 1.0, 1, 3);
        let probe = propagate_linearized_flow(&params, &config, 5.0).unwrap();
        assert_abs_diff_eq!(probe.log_det_expected, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probe.log_det, probe.log_det_expected, epsilon = 0.02);
    }

    #[test]
    fn linear_flow_identity_is_deterministic() {
        let params = ChainParams::natural(3, 0.9_f64.sqrt(), 1.0, 0.1, 0.0, 1.2, 0.8).unwrap();
        let gap = linear_flow_check(&params, 6.0, 6000).unwrap();
        assert!(gap < 1e-8, "gap {gap:.3e}");
        // Rejects anharmonic parameters.
        let bad = ChainParams::natural(3, 1.0, 1.0, 0.1, 0.5, 1.2, 0.8).unwrap();
        assert!(linear_flow_check(&bad, 2.0, 100).is_err());
    }

    #[test]
    fn validation_collapses_for_harmonic_chain() {
        // λ = 0: tangents are deterministic, so both representation sides
        // coincide and the equality statistic is pure outer-MC noise.
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.0, 1.1, 0.9).unwrap();
        let mut config = base_config(0.004, 0.0, 1.0, 32, 5);
        config.batch_count = 10;
        let report = validate_covariance_formula(&params, &config, 1.0, 8).unwrap();
        assert!(max_norm(&(&report.rhs_conditional - &report.rhs_unconditional)) < 1e-12);
        // Deterministic tangents leave only floating-point residue in the
        // inner-variance correction.
        assert!(report.inner_noise_fraction < 1e-12);
        assert!(!report.inner_noise_flag);
        assert!(report.equality_gap_over_sigma < 6.0);
        assert!(report.psd_min_eigenvalue > -4.0 * report.psd_min_stderr - 1e-9);
    }

    #[test]
    fn validation_smoke_anharmonic() {
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.25, 1.2, 0.8).unwrap();
        let mut config = base_config(0.003, 0.0, 1.0, 32, 17);
        config.batch_count = 10;
        let report = validate_covariance_formula(&params, &config, 1.0, 12).unwrap();
        assert!(report.equality_gap_over_sigma < 6.0);
        assert!(report.psd_min_eigenvalue > -5.0 * report.psd_min_stderr - 1e-9);
        assert!(report.n_outer == 32 && report.n_inner == 12);
    }

    #[test]
    fn diverging_step_is_reported() {
        // A dt far beyond the stability bound must be rejected up front;
        // bypassing the validation by calling the integrator with a huge
        // t_end still trips the guard.
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 5.0, 1.0, 1.0).unwrap();
        let config = base_config(0.002, 1.0, 10.0, 1, 1);
        assert!(config.validate(&params).is_err()); // λ = 5 tightens the bound
        let softer = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        let est = integrate(&softer, &base_config(0.004, 1.0, 10.0, 1, 1), 5.0, 0).unwrap();
        assert!(est.q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn equilibrium_qp_block_is_statistically_zero() {
        // Equal baths: the stationary measure is Gibbs even with the
        // quartic term on, and it factorises over positions and momenta,
        // so every ⟨q_i p_j⟩ vanishes.  The sampled block must be zero
        // within noise; only the diagonal carries a small O(dt) shift from
        // the discretisation, covered by the absolute floor.
        let params = ChainParams::natural(3, 1.0, 1.0, 0.2, 0.5, 1.0, 1.0).unwrap();
        let config = base_config(0.0015, 30.0, 400.0, 4, 71);
        let est = estimate_stationary_covariance(&params, &config).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v = est.mean[(i, 3 + j)];
                let s = est.stderr[(i, 3 + j)];
                assert!(
                    v.abs() <= (4.0 * s).max(3e-3),
                    "qp[({i},{j})] = {v:+.2e} with stderr {s:.2e}"
                );
            }
        }
    }

    #[test]
    fn window_halves_estimate_the_same_covariance() {
        // Stationarity after burn-in: pooling the early batches of every
        // trajectory must agree with pooling the late batches within the
        // combined batch-mean error.
        let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.3, 1.4, 0.6).unwrap();
        let config = base_config(0.0025, 40.0, 600.0, 2, 33);
        let (mut early, mut late) = (Vec::new(), Vec::new());
        for traj in 0..config.n_traj {
            let mut batches = covariance_batches(&params, &config, traj as u64).unwrap();
            let tail = batches.split_off(batches.len() / 2);
            early.extend(batches);
            late.extend(tail);
        }
        let a = combine_batches(&early, 4);
        let b = combine_batches(&late, 4);
        for i in 0..4 {
            for j in 0..4 {
                let sigma = a.stderr[(i, j)].hypot(b.stderr[(i, j)]);
                let gap = (a.mean[(i, j)] - b.mean[(i, j)]).abs();
                assert!(
                    gap <= 3.0 * sigma.max(1e-12),
                    "entry ({i},{j}): halves differ by {gap:.2e} vs sigma {sigma:.2e}"
                );
            }
        }
    }
}
