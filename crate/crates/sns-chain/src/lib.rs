//! Stationary states of oscillator chains driven out of equilibrium by two
//! heat baths at different temperatures.
//!
//! The model is a chain of `N` unit-mass oscillators with nearest-neighbour
//! harmonic coupling, pinned ends, an optional on-site harmonic pinning and a
//! quartic on-site anharmonicity, with Langevin thermostats of temperatures
//! `T1` and `TN` attached to the first and last site:
//!
//! ```text
//! dq_i = p_i dt
//! dp_i = -ω² ((2+κ) q_i - q_{i-1} - q_{i+1}) dt - λ q_i³ dt
//!        - γ p_i (δ_{i1}+δ_{iN}) dt + √(2γ k T_i) dW_i   (i ∈ {1, N})
//! ```
//!
//! with wall conventions `q_0 = q_{N+1} = 0`.
//!
//! For `λ = 0` the stationary measure is Gaussian and its covariance is known
//! in closed form; the anharmonicity is treated to first order in `λ`.  The
//! crate provides:
//!
//! * [`chain`] — parameters, derived scalars, structure matrices, drift,
//!   energy and stability checks;
//! * [`lyapunov`] — continuous-time Lyapunov solvers (Schur-based and a dense
//!   Kronecker oracle), symmetry classification under transpose and
//!   cross-transpose, and quadrature forms of the stationary covariance;
//! * [`harmonic`] — the exact `λ = 0` stationary covariance assembled from
//!   hyperbolic-sine ratio vectors, with temperature profile and heat current;
//! * [`perturbation`] — the first-order correction `Φ¹ = dΦ/dλ|₀`, both as a
//!   dense Lyapunov solve and through structured commutator recursions that
//!   reduce everything to tridiagonal systems; current and temperature-profile
//!   corrections, including the large-`N` plateau constant;
//! * [`montecarlo`] — Euler–Maruyama simulation, stationary covariance
//!   estimation with batch-means errors, common-random-number finite
//!   differences in `λ`, linearized-flow propagation and a nested Monte-Carlo
//!   check of the covariance representation through the linearized flow;
//! * [`report`] — config-driven commands that write CSV/JSON artifacts, and
//!   the deterministic verification battery behind the `sns-chain verify`
//!   subcommand.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! * `cargo run --example harmonic_profile` — exact covariance, kinetic
//!   temperature profile and heat current of a short chain;
//! * `cargo run --example lyapunov_solver` — Lyapunov solve, residual, and
//!   agreement with the integral form;
//! * `cargo run --example first_order_current` — first-order current
//!   correction: structured pipeline vs. dense solve;
//! * `cargo run --example temperature_profile_correction` — linear-in-`i`
//!   first-order profile and the flat second-order plateau;
//! * `cargo run --example simulate_covariance` — Monte-Carlo covariance vs.
//!   the exact harmonic result;
//! * `cargo run --example finite_difference_validation` — stochastic
//!   `dΦ/dλ` estimate vs. the deterministic first-order solution;
//! * `cargo run --example covariance_formula_check` — nested Monte-Carlo
//!   check of the flow representation of stationary covariances.
//!
//! The thin `sns-chain` binary drives the same library functions from a JSON
//! config; see the crate README.

pub mod chain;
pub mod harmonic;
pub mod linalg;
pub mod lyapunov;
pub mod montecarlo;
pub mod perturbation;
pub mod report;

mod error;

pub use error::ChainError;

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, ChainError>;
