//! Exact stationary state of the harmonic chain between two heat baths:
//! kinetic temperature profile and bond currents straight from the
//! closed-form covariance.
//!
//! Run with: `cargo run --example harmonic_profile`

use sns_chain::chain::ChainParams;
use sns_chain::harmonic::{assemble_phi0, heat_current, temperature_profile};

fn main() -> sns_chain::Result<()> {
    // Ten sites, pinned walls, boundary friction γ = 1, hot left bath.
    let params = ChainParams::natural(10, 1.0, 1.0, 0.0, 0.0, 1.5, 0.5)?;
    let blocks = assemble_phi0(&params)?;

    println!("harmonic chain, N = {}, T1 = {}, TN = {}", params.n, params.t1, params.tn);
    println!();
    println!("site   kinetic temperature");
    for (i, t) in temperature_profile(&blocks, params.k_b).iter().enumerate() {
        println!("{:>4}   {t:.6}", i + 1);
    }

    // The famous failure of Fourier's law: away from the contacts the
    // profile is flat at the mean temperature, and all the drop happens
    // at the two boundary sites.
    let d = params.derived();
    println!();
    println!("mean bath temperature      : {:.6}", d.t_mean);
    println!("profile at the mid sites   : {:.6}", temperature_profile(&blocks, params.k_b)[params.n / 2]);

    // The current ⟨q_i p_{i+1}⟩ is the same on every bond — no gradient is
    // needed to sustain it.
    println!();
    println!("bond   <q_i p_(i+1)>");
    for (i, j) in heat_current(&blocks).iter().enumerate() {
        println!("{:>4}   {j:+.8}", i + 1);
    }
    Ok(())
}
