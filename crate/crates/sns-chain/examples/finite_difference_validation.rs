//! Validating the analytic first-order covariance correction against raw
//! simulation: a common-random-numbers finite difference in the coupling,
//! Richardson-extrapolated over two probe values to cancel the leading
//! truncation error.
//!
//! Run with: `cargo run --release --example finite_difference_validation`

use sns_chain::chain::ChainParams;
use sns_chain::linalg::max_norm;
use sns_chain::montecarlo::{estimate_first_order_fd, SimConfig};
use sns_chain::perturbation::solve_first_order_dense;

fn main() -> sns_chain::Result<()> {
    let params = ChainParams::natural(3, 1.0, 1.0, 0.0, 0.0, 0.65, 0.35)?;
    let config = SimConfig {
        dt: 0.00125,
        t_burn: 50.0,
        t_total: 1200.0,
        n_traj: 4,
        seed: 21,
        batch_count: 8,
    };

    // Both arms of each difference replay the same noise, so the statistical
    // error of (Φ^λ - Φ⁰)/λ is far below that of either covariance.
    let coarse = estimate_first_order_fd(&params, 0.02, &config)?;
    let fine = estimate_first_order_fd(&params, 0.01, &config)?;
    let extrap = &fine.mean * 2.0 - &coarse.mean;
    let dense = solve_first_order_dense(&params)?.phi1_full();

    println!("dΦ/dλ at λ = 0, N = {} (qq block diagonal):", params.n);
    println!("site   fd(0.02)     fd(0.01)     extrapolated     analytic");
    for i in 0..params.n {
        let sigma = (2.0 * fine.stderr[(i, i)]).hypot(coarse.stderr[(i, i)]);
        println!(
            "{:>4}   {:+.6}    {:+.6}    {:+.6} ± {:.3}   {:+.6}",
            i + 1,
            coarse.mean[(i, i)],
            fine.mean[(i, i)],
            extrap[(i, i)],
            sigma,
            dense[(i, i)]
        );
    }
    println!();
    println!(
        "max |extrapolated - analytic| = {:.3e} (scale {:.3})",
        max_norm(&(&extrap - &dense)),
        max_norm(&dense)
    );
    println!("the raw quotients drift toward the analytic value as the probe");
    println!("shrinks (quartic saturation); the remaining gap is shared between");
    println!("the time-step bias of the discretised chain and sampling noise.");
    Ok(())
}
