//! Monte Carlo estimate of the stationary covariance with batch-means
//! error bars, compared entry by entry against the exact harmonic result.
//!
//! Run with: `cargo run --release --example simulate_covariance`

use sns_chain::chain::ChainParams;
use sns_chain::harmonic::assemble_phi0;
use sns_chain::montecarlo::{estimate_stationary_covariance, max_stable_dt, SimConfig};

fn main() -> sns_chain::Result<()> {
    let params = ChainParams::natural(4, 1.0, 1.0, 0.0, 0.0, 1.25, 0.75)?;
    let config = SimConfig {
        dt: 0.8 * max_stable_dt(&params),
        t_burn: 100.0,
        t_total: 2000.0,
        n_traj: 4,
        seed: 7,
        batch_count: 8,
    };
    println!(
        "sampling N = {} chain: dt = {:.4}, {} trajectories x {} time units",
        params.n, config.dt, config.n_traj, config.t_total
    );

    let estimate = estimate_stationary_covariance(&params, &config)?;
    let exact = assemble_phi0(&params)?.assembled();

    let dim = 2 * params.n;
    let mut max_z = 0.0_f64;
    let mut within = 0;
    let mut counted = 0;
    for a in 0..dim {
        for b in 0..dim {
            let s = estimate.stderr[(a, b)];
            if s > 1e-14 {
                counted += 1;
                let z = (estimate.mean[(a, b)] - exact[(a, b)]).abs() / s;
                max_z = max_z.max(z);
                if z <= 3.0 {
                    within += 1;
                }
            }
        }
    }
    println!("pooled batches: {}", estimate.effective_samples);
    println!("entries within 3 sigma of the exact covariance: {within}/{counted}");
    println!("largest z-score: {max_z:.2}");
    println!();
    println!("site   <q_i^2> simulated   exact      <p_i^2> simulated   exact");
    for i in 0..params.n {
        println!(
            "{:>4}   {:>9.5} ± {:.5}  {:>8.5}   {:>9.5} ± {:.5}  {:>8.5}",
            i + 1,
            estimate.mean[(i, i)],
            estimate.stderr[(i, i)],
            exact[(i, i)],
            estimate.mean[(params.n + i, params.n + i)],
            estimate.stderr[(params.n + i, params.n + i)],
            exact[(params.n + i, params.n + i)]
        );
    }
    Ok(())
}
