//! First-order correction of the bond current under a quartic on-site
//! pinning, computed by the structured `O(N²)` pipeline and checked against
//! the dense Lyapunov solve.
//!
//! Run with: `cargo run --example first_order_current`

use sns_chain::chain::ChainParams;
use sns_chain::perturbation::{current_pipeline, current_uniformity_check};

fn main() -> sns_chain::Result<()> {
    println!("   N    varphi1 (kappa=0)   varphi1 (kappa=0.1)   d<q_i p_(i+1)>/dlambda");
    for n in [4usize, 8, 16, 32, 64, 128] {
        let free = ChainParams::natural(n, 1.0, 1.0, 0.0, 0.0, 1.5, 0.5)?;
        let pinned = ChainParams::natural(n, 1.0, 1.0, 0.1, 0.0, 1.5, 0.5)?;
        let pipeline = current_pipeline(&free)?;
        println!(
            "{n:>4}    {:+.9}        {:+.9}          {:+.9}",
            pipeline.varphi[0],
            current_pipeline(&pinned)?.varphi[0],
            pipeline.current_correction
        );
    }
    println!();
    println!("the correction stays finite per bond, so to first order the");
    println!("anharmonicity does not restore Fourier's law.  with pinning the");
    println!("limit is reached exponentially fast; without it the tail decays");
    println!("like 1/N because the local <q_i^2> weights keep growing with N.");

    // Cross-check against the dense solver on a small chain: every bond of
    // the densely computed correction carries the same value.
    let params = ChainParams::natural(8, 1.0, 1.0, 0.0, 0.0, 1.5, 0.5)?;
    let uniformity = current_uniformity_check(&params)?;
    println!();
    println!("dense cross-check at N = 8:");
    println!("  bond spread     = {:.3e}", uniformity.max_spread);
    println!("  vs structured   = {:.3e}", uniformity.max_deviation);
    Ok(())
}
