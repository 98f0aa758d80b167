//! Acceptance battery: one test per criterion, each ending in a single
//! `[PASS]`/`[FAIL]` line (run with `--nocapture` to see the lines of the
//! passing tests).  The deterministic criteria pit closed forms, structured
//! recursions and dense solves against each other; the statistical ones pit
//! the samplers against the analytic results at fixed seeds and budgets.

use nalgebra::DMatrix;

use sns_chain::chain::ChainParams;
use sns_chain::harmonic::{self, ExtendedPhi};
use sns_chain::linalg::{max_norm, tridiag_toeplitz_inverse};
use sns_chain::lyapunov::{cross_transpose, solve_lyapunov};
use sns_chain::montecarlo::{
    estimate_first_order_fd, estimate_stationary_covariance, linear_flow_check,
    validate_covariance_formula, SimConfig,
};
use sns_chain::perturbation::{
    current_uniformity_check, solve_first_order_dense, y1_linear_slope, y1_profile, y2_profile,
};
use sns_chain::report::{run_profile, FigureKind};

const NU_GRID: [f64; 3] = [0.5, 1.0, 2.0];
const KAPPA_GRID: [f64; 3] = [0.0, 0.1, 1.0];

/// Prints the per-criterion verdict line, then enforces it.
fn verdict(name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(passed, "[{tag}] {name}: {detail}");
}

/// Chain at unit damping with `ω = √ν`, so `ν = ω²/γ²` is set directly.
fn grid_params(n: usize, nu: f64, kappa: f64, t1: f64, tn: f64) -> ChainParams {
    ChainParams::natural(n, nu.sqrt(), 1.0, kappa, 0.0, t1, tn).expect("valid grid point")
}

/// Least-squares slope of `values[k]` against `offset + k`.
fn fitted_slope(values: &[f64], offset: usize) -> f64 {
    let m = values.len() as f64;
    let x_bar = offset as f64 + (m - 1.0) / 2.0;
    let y_bar = values.iter().sum::<f64>() / m;
    let (mut num, mut den) = (0.0_f64, 0.0_f64);
    for (k, &y) in values.iter().enumerate() {
        let dx = offset as f64 + k as f64 - x_bar;
        num += dx * (y - y_bar);
        den += dx * dx;
    }
    num / den
}

#[test]
fn c01_harmonic_covariance_exactness() {
    // Closed-form Φ⁰ solves bΦ⁰ + Φ⁰bᵀ = -D to 1e-10 relative to ‖D‖ and
    // matches the dense Lyapunov solve entrywise to 1e-9, for every
    // N ∈ {2..40} over the (ν, κ) grid.
    let (mut worst_residual, mut worst_dense) = (0.0_f64, 0.0_f64);
    let mut cases = 0usize;
    for n in 2..=40 {
        for nu in NU_GRID {
            for kappa in KAPPA_GRID {
                let params = grid_params(n, nu, kappa, 1.5, 0.5);
                let sm = params.struct_matrices();
                let phi0 = harmonic::assemble_phi0(&params).unwrap().assembled();
                let residual =
                    max_norm(&(&sm.b * &phi0 + &phi0 * sm.b.transpose() + &sm.d));
                worst_residual = worst_residual.max(residual / max_norm(&sm.d));
                let dense = solve_lyapunov(&sm.b, &(-&sm.d)).unwrap().phi;
                worst_dense = worst_dense.max(max_norm(&(&phi0 - &dense)));
                cases += 1;
            }
        }
    }
    verdict(
        "01 harmonic covariance exactness",
        worst_residual <= 1e-10 && worst_dense <= 1e-9,
        &format!(
            "{cases} cases; worst residual/|D| {worst_residual:.2e} (tol 1e-10), \
             worst |closed - dense| {worst_dense:.2e} (tol 1e-9)"
        ),
    );
}

#[test]
fn c02_phi_closed_form_on_long_chains() {
    // The overflow-safe closed form of φ agrees with the tridiagonal solve
    // to 1e-10 up to N = 200 for all (ν, κ), including the stiff κ = 1
    // corner where sinh(Nα) overflows a naive evaluation.
    let mut worst = 0.0_f64;
    for n in [50usize, 100, 150, 200] {
        for nu in NU_GRID {
            for kappa in KAPPA_GRID {
                let closed = ExtendedPhi::closed_form(n, nu, kappa).unwrap();
                let solved = ExtendedPhi::from_tridiagonal(n, nu, kappa).unwrap();
                let gap = closed
                    .base()
                    .iter()
                    .zip(solved.base())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                worst = worst.max(gap);
            }
        }
    }
    verdict(
        "02 phi closed form vs tridiagonal",
        worst <= 1e-10,
        &format!("worst gap {worst:.2e} up to N=200 (tol 1e-10)"),
    );
}

#[test]
fn c03_first_order_structure() {
    // The η-resolved first-order blocks have (i) the closed-form zero-order
    // part (-𝒢⁻¹V̄₀𝒢⁻¹, 0, 0), (ii) the reflection/transposition symmetry
    // table, and (iii) the forced zeros (Z₂ superdiagonal, (Y₂)₁₁), all to
    // 1e-10.
    let tol = 1e-10;
    let (mut worst_zero, mut worst_sym, mut worst_forced) = (0.0_f64, 0.0_f64, 0.0_f64);
    for n in [2usize, 3, 4, 6, 8] {
        for nu in NU_GRID {
            for kappa in KAPPA_GRID {
                let params = grid_params(n, nu, kappa, 2.0, 1.0);
                let dec = solve_first_order_dense(&params).unwrap();

                let ginv = tridiag_toeplitz_inverse(n, 2.0 + kappa, -1.0).unwrap();
                let v0 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                    harmonic::g_vector(n, kappa),
                ));
                let x0 = -(&ginv * &v0 * &ginv);
                worst_zero = worst_zero
                    .max(max_norm(&(&dec.x[0] - &x0)))
                    .max(max_norm(&dec.y[0]))
                    .max(max_norm(&dec.z[0]));

                let sym = |m: &DMatrix<f64>| max_norm(&(m - &m.transpose()));
                let antisym = |m: &DMatrix<f64>| max_norm(&(m + &m.transpose()));
                let c_sym = |m: &DMatrix<f64>| max_norm(&(cross_transpose(m) - m));
                let c_antisym = |m: &DMatrix<f64>| max_norm(&(cross_transpose(m) + m));
                for defect in [
                    sym(&dec.x[1]),
                    c_antisym(&dec.x[1]),
                    sym(&dec.y[1]),
                    c_antisym(&dec.y[1]),
                    antisym(&dec.z[1]),
                    c_sym(&dec.z[1]),
                    sym(&dec.x[2]),
                    c_sym(&dec.x[2]),
                    sym(&dec.y[2]),
                    c_sym(&dec.y[2]),
                    antisym(&dec.z[2]),
                    c_antisym(&dec.z[2]),
                ] {
                    worst_sym = worst_sym.max(defect);
                }

                let z2_super = (0..n - 1)
                    .map(|i| dec.z[2][(i, i + 1)].abs())
                    .fold(0.0_f64, f64::max);
                worst_forced = worst_forced.max(z2_super).max(dec.y[2][(0, 0)].abs());
            }
        }
    }
    verdict(
        "03 first-order structure",
        worst_zero <= tol && worst_sym <= tol && worst_forced <= tol,
        &format!(
            "zero-order gap {worst_zero:.2e}, symmetry defect {worst_sym:.2e}, \
             forced zeros {worst_forced:.2e} (tol 1e-10)"
        ),
    );
}

#[test]
fn c04_current_pipeline_vs_dense() {
    // The O(N²) current pipeline reproduces the dense (Z₁)_{1,2} to 1e-8
    // for N ≤ 16 across the grid, and the dense bond corrections are
    // uniform along the chain to 1e-10.
    let (mut worst_dev, mut worst_spread) = (0.0_f64, 0.0_f64);
    let mut cases = 0usize;
    for n in [2usize, 3, 4, 6, 8, 12, 16] {
        for nu in NU_GRID {
            for kappa in KAPPA_GRID {
                let params = grid_params(n, nu, kappa, 2.0, 1.0);
                let uniformity = current_uniformity_check(&params).unwrap();
                worst_dev = worst_dev.max(uniformity.max_deviation);
                worst_spread = worst_spread.max(uniformity.max_spread);
                cases += 1;
            }
        }
    }
    verdict(
        "04 current pipeline vs dense",
        worst_dev <= 1e-8 && worst_spread <= 1e-10,
        &format!(
            "{cases} cases; worst pipeline-dense gap {worst_dev:.2e} (tol 1e-8), \
             worst bond spread {worst_spread:.2e} (tol 1e-10)"
        ),
    );
}

#[test]
fn c05_current_correction_saturation() {
    // Expectation under test: |varphi₁(100) - varphi₁(50)| ≤ 1e-6 at ν = 1,
    // κ = 0, i.e. exponential saturation of the bounded per-bond correction.
    // The correction is indeed uniformly bounded, and with pinning it does
    // saturate exponentially (the κ = 0.1 gap below sits at round-off), but
    // at κ = 0 the g_i = i(N+1-i)/(N+1) weights keep an O(1/N) dependence
    // and the approach to the limit is algebraic: the gap is ≈ 1.75e-3 and
    // no budget makes it meet 1e-6.  Both halves of the comparison agree
    // with the dense Lyapunov solve to 2e-12, so the distance is a property
    // of the model, not of the pipeline; the criterion is recorded here as
    // stated and left failing.
    let varphi = |n: usize, kappa: f64| {
        let p = grid_params(n, 1.0, kappa, 2.0, 1.0);
        sns_chain::perturbation::current_pipeline(&p).unwrap().varphi[0]
    };
    let gap_free = (varphi(100, 0.0) - varphi(50, 0.0)).abs();
    let gap_pinned = (varphi(100, 0.1) - varphi(50, 0.1)).abs();
    verdict(
        "05 current correction saturation",
        gap_free <= 1e-6,
        &format!(
            "|varphi1(100) - varphi1(50)| = {gap_free:.4e} at kappa=0 (tol 1e-6); \
             pinned kappa=0.1 gap {gap_pinned:.1e}; kappa=0 tail decays like 1/N"
        ),
    );
}

#[test]
fn c06_y1_bulk_slope() {
    // At ν = 1, N = 100, κ = 0 the middle-third linear fit of the exact
    // (Y₁)_ii recursion has slope within 1% of the closed form
    // (4/25)/(N+1), the η-weighted slope is positive for T₁ > T_N (the
    // bulk gradient points against the imposed bias), and the recursion
    // matches the dense order-200 solve to 1e-8.
    let params = grid_params(100, 1.0, 0.0, 2.0, 1.0);
    let y1 = y1_profile(&params).unwrap();
    let reference = y1_linear_slope(100, 1.0);
    let (lo, hi) = (100 / 3, 2 * 100 / 3);
    let slope = fitted_slope(&y1.diag[lo..hi], lo);
    let rel = (slope - reference).abs() / reference.abs();
    let eta = params.derived().eta;
    let oriented = eta * slope > 0.0;
    let dense = solve_first_order_dense(&params).unwrap();
    let dense_gap = (0..100)
        .map(|i| (y1.diag[i] - dense.y[1][(i, i)]).abs())
        .fold(0.0_f64, f64::max);
    verdict(
        "06 order-eta profile bulk slope",
        rel <= 0.01 && oriented && dense_gap <= 1e-8,
        &format!(
            "fit {slope:.6e} vs closed {reference:.6e} (rel {rel:.2e}, tol 1e-2); \
             eta-weighted sign positive: {oriented}; dense gap {dense_gap:.2e} (tol 1e-8)"
        ),
    );
}

#[test]
fn c07_y2_plateau_constant() {
    // The finite-N plateau constant h = h₁ + νh₂ at N = 200, ν = 1, κ = 0
    // is within 1e-6 of -2/15, and the Δ-recursion diagonal matches the
    // dense (Y₂)_ii to 1e-8 at N = 12 across the grid.
    let p200 = grid_params(200, 1.0, 0.0, 2.0, 1.0);
    let plateau = y2_profile(&p200).unwrap();
    let h_gap = (plateau.h - (-2.0 / 15.0)).abs();

    let mut dense_gap = 0.0_f64;
    for nu in NU_GRID {
        for kappa in KAPPA_GRID {
            let params = grid_params(12, nu, kappa, 2.0, 1.0);
            let profile = y2_profile(&params).unwrap();
            let dec = solve_first_order_dense(&params).unwrap();
            for i in 0..12 {
                dense_gap = dense_gap.max((profile.diag[i] - dec.y[2][(i, i)]).abs());
            }
        }
    }
    verdict(
        "07 order-eta^2 plateau constant",
        h_gap <= 1e-6 && dense_gap <= 1e-8,
        &format!(
            "|h - (-2/15)| = {h_gap:.2e} at N=200 (tol 1e-6); \
             dense vs recursion gap {dense_gap:.2e} at N=12 (tol 1e-8)"
        ),
    );
}

#[test]
fn c08_profile_figures() {
    // The profile command reproduces both figure data sets at ν = 1,
    // N = 100: the order-η curves for κ ∈ {0, 0.1} (antisymmetric about the
    // centre, rising through the bulk at κ = 0, exponentially flattened
    // when pinned) and the order-η² curve (first value exactly zero, bulk
    // within 1e-3 of -2/15).  The quantitative anchors live in criteria
    // 6-7; this one checks the emitted artefacts.
    let dir = tempfile::tempdir().unwrap();
    let params = grid_params(100, 1.0, 0.0, 2.0, 1.0);
    run_profile(&params, FigureKind::Y1, dir.path()).unwrap();
    run_profile(&params, FigureKind::Y2, dir.path()).unwrap();

    let rows = |name: &str| -> Vec<Vec<String>> {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .skip(1) // header
            .map(|l| l.split(',').map(str::to_owned).collect())
            .collect()
    };

    let y1_rows = rows("figure_y1.csv");
    let mut curves: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for row in &y1_rows {
        curves
            .entry(row[0].clone())
            .or_default()
            .push(row[2].parse().unwrap());
    }
    let free = &curves["0"];
    let pinned = &curves["0.1"];
    let both_full = free.len() == 100 && pinned.len() == 100;
    let antisym = |v: &[f64]| {
        (0..v.len())
            .map(|i| (v[i] + v[v.len() - 1 - i]).abs())
            .fold(0.0_f64, f64::max)
    };
    let antisymmetric = antisym(free) <= 1e-8 && antisym(pinned) <= 1e-8;
    let rising_bulk = (33..66).all(|i| free[i + 1] > free[i]);
    let flattened = pinned[49].abs() <= 1e-3 * pinned[4].abs();

    let y2_rows = rows("figure_y2.csv");
    let first: f64 = y2_rows[0][1].parse().unwrap();
    let mid: f64 = y2_rows[49][1].parse().unwrap();
    let y2_ok = first == 0.0 && (mid - (-2.0 / 15.0)).abs() <= 1e-3;

    verdict(
        "08 profile figure artefacts",
        both_full && antisymmetric && rising_bulk && flattened && y2_ok,
        &format!(
            "rows {}/{}; antisymmetric {antisymmetric}; kappa=0 bulk rising {rising_bulk}; \
             kappa=0.1 centre/edge {:.1e}; y2 first {first}, bulk gap {:.1e} (tol 1e-3)",
            free.len(),
            pinned.len(),
            pinned[49].abs() / pinned[4].abs(),
            (mid - (-2.0 / 15.0)).abs()
        ),
    );
}

#[test]
fn c09_sampled_covariance_and_derivative() {
    // Statistical validation at N = 4, ν = 1, κ = 0.  (i) With λ = 0 the
    // sampled stationary covariance matches Φ⁰ within 3 standard errors on
    // at least 95% of the entries (the time-step bias is held below the
    // noise by dt = 8e-4).  (ii) The common-random-numbers finite
    // difference (Φ̂^0.1 - Φ̂⁰)/0.1 matches the dense first-order derivative
    // within 3 standard errors plus a 15% bias allowance on every entry
    // exceeding 10% of the largest; cold baths (kT ≈ 0.05) keep the finite-λ
    // saturation inside that allowance.
    let params = grid_params(4, 1.0, 0.0, 1.25, 0.75);
    let config = SimConfig {
        dt: 8e-4,
        t_burn: 150.0,
        t_total: 2500.0,
        n_traj: 6,
        seed: 101,
        batch_count: 8,
    };
    let est = estimate_stationary_covariance(&params, &config).unwrap();
    let phi0 = harmonic::assemble_phi0(&params).unwrap().assembled();
    let (mut within, mut counted) = (0usize, 0usize);
    let mut max_z = 0.0_f64;
    for a in 0..8 {
        for b in 0..8 {
            let s = est.stderr[(a, b)];
            if s > 1e-14 {
                counted += 1;
                let z = (est.mean[(a, b)] - phi0[(a, b)]).abs() / s;
                max_z = max_z.max(z);
                if z <= 3.0 {
                    within += 1;
                }
            }
        }
    }
    let fraction = within as f64 / counted as f64;

    let cold = grid_params(4, 1.0, 0.0, 0.0625, 0.0375);
    let fd_config = SimConfig {
        dt: 0.0028,
        t_burn: 80.0,
        t_total: 2000.0,
        n_traj: 6,
        seed: 5,
        batch_count: 8,
    };
    let fd = estimate_first_order_fd(&cold, 0.1, &fd_config).unwrap();
    let dense = solve_first_order_dense(&cold).unwrap().phi1_full();
    let scale = max_norm(&dense);
    let mut fd_ok = true;
    let mut worst_excess = 0.0_f64;
    let mut significant = 0usize;
    for a in 0..8 {
        for b in 0..8 {
            if dense[(a, b)].abs() <= 0.1 * scale {
                continue;
            }
            significant += 1;
            let gap = (fd.mean[(a, b)] - dense[(a, b)]).abs();
            let allowed = 3.0 * fd.stderr[(a, b)] + 0.15 * scale;
            worst_excess = worst_excess.max(gap - 3.0 * fd.stderr[(a, b)]);
            if gap > allowed {
                fd_ok = false;
            }
        }
    }

    verdict(
        "09 sampled covariance and derivative",
        fraction >= 0.95 && fd_ok,
        &format!(
            "covariance: {within}/{counted} entries within 3 stderr (max z {max_z:.2}); \
             derivative: {significant} significant entries, worst bias beyond 3 stderr \
             {:.1}% of scale (allowance 15%)",
            100.0 * worst_excess.max(0.0) / scale
        ),
    );
}

#[test]
fn c10_covariance_formula_and_inequality() {
    // (i) λ = 0: the covariance formula collapses to the closed-form
    // identity Φ⁰ - e^{bt}Φ⁰e^{bᵀt} = ∫₀ᵗ e^{bs}De^{bᵀs}ds, checked
    // deterministically to 1e-8.  (ii) λ = 0.2, N = 2: the nested sampler
    // confirms the conditional-product form of C_t within 3 combined
    // standard errors and the positive-semidefiniteness of the
    // unconditional bound within 3 standard errors of its smallest
    // eigenvalue.
    let harmonic_params = ChainParams::natural(3, 0.9, 1.0, 0.2, 0.0, 1.4, 0.6).unwrap();
    let deterministic_gap = linear_flow_check(&harmonic_params, 6.0, 6000).unwrap();

    let params = ChainParams::natural(2, 1.0, 1.0, 0.0, 0.2, 1.2, 0.8).unwrap();
    let config = SimConfig {
        dt: 0.003,
        t_burn: 40.0,
        t_total: 2.0,
        n_traj: 96,
        seed: 7,
        batch_count: 10,
    };
    let report = validate_covariance_formula(&params, &config, 2.0, 24).unwrap();
    let psd_z = report.psd_min_eigenvalue / report.psd_min_stderr.max(1e-300);

    verdict(
        "10 covariance formula and inequality",
        deterministic_gap <= 1e-8
            && report.equality_gap_over_sigma <= 3.0
            && psd_z >= -3.0,
        &format!(
            "deterministic identity gap {deterministic_gap:.2e} (tol 1e-8); \
             nested equality gap {:.2} sigma (tol 3); \
             min eigenvalue z {psd_z:+.2} (tol -3)",
            report.equality_gap_over_sigma
        ),
    );
}
