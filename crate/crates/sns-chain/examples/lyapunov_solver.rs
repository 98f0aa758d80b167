//! Solving the stationary covariance equation `bΦ + Φbᵀ = -D` three ways:
//! Schur-based dense solve, Kronecker-product oracle, and time quadrature
//! of the integral representation.
//!
//! Run with: `cargo run --example lyapunov_solver`

use sns_chain::chain::ChainParams;
use sns_chain::linalg::max_norm;
use sns_chain::lyapunov::{
    classify_symmetry, integral_form, solve_lyapunov, solve_lyapunov_kronecker,
};

fn main() -> sns_chain::Result<()> {
    let params = ChainParams::natural(6, 1.2, 0.7, 0.3, 0.0, 1.3, 0.9)?;
    let sm = params.struct_matrices();
    let h = -&sm.d;

    let solution = solve_lyapunov(&sm.b, &h)?;
    println!("order {} solve, residual = {:.3e}", 2 * params.n, solution.residual_max);

    let kron = solve_lyapunov_kronecker(&sm.b, &h)?;
    println!("vs Kronecker oracle      : {:.3e}", max_norm(&(&solution.phi - &kron)));

    // ∫₀^T e^{bs} D e^{bᵀs} ds converges to the same matrix once the
    // horizon covers the slowest relaxation, so size it from the spectral
    // abscissa reported by the stability check.
    let stability = sns_chain::chain::check_drift_stability(&sm.b)?;
    let horizon = 1.05 * (1e8_f64).ln() / stability.spectral_abscissa.abs();
    let steps = ((horizon / 0.02).ceil() as usize).next_multiple_of(2);
    println!(
        "spectral abscissa {:.3e} -> horizon {:.0}",
        stability.spectral_abscissa, horizon
    );
    let integral = integral_form(&sm.b, &h, horizon, steps)?;
    println!("vs integral representation: {:.3e}", max_norm(&(&solution.phi - &integral)));

    // The stationary covariance inherits the chain's reflection structure.
    println!();
    println!("symmetry classes of Φ: {:?}", classify_symmetry(&solution.phi, 1e-10));
    Ok(())
}
