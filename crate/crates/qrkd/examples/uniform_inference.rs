//! Uniform inference across quantiles: tests and a confidence band.
//!
//! Run with: cargo run --release --example uniform_inference
//!
//! This example demonstrates:
//! - simulating the pivotal limit process on a quantile grid
//! - the sup-type significance test (is the effect zero everywhere?)
//! - the sup-type heterogeneity test (is the effect constant?)
//! - a 95% uniform confidence band around the estimated effect profile
//!
//! The data carry a constant kink effect of 0.5, so the significance test
//! should reject and the heterogeneity test should accept.

use qrkd::dgp_sim::{draw_sample, Structure, StructureSpec};
use qrkd::inference::{simulate_pivotal, test_heterogeneity, test_significance, uniform_band};
use qrkd::local_fit::{fit_local_poly, qrkd_point};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = StructureSpec::new(Structure::S1);
    let design = spec.kink_design();
    let sample = draw_sample(&spec, 2000, 11)?;

    // Estimate the effect profile on the standard 17-point grid.
    let grid = qrkd::quantile_grid(0.1, 0.9, 0.05)?;
    let plan = qrkd::bandwidth::build_plan(&sample, &design, &grid)?;
    let mut fits = Vec::with_capacity(grid.len());
    let mut estimates = Vec::with_capacity(grid.len());
    for (t, &tau) in grid.iter().enumerate() {
        let est = qrkd_point(
            fit_local_poly(&sample, &design, tau, plan.h(t), 2)?,
            &design,
        );
        estimates.push(est.value);
        fits.push(est.fit);
    }

    // Simulate the pivotal process that the scaled estimation error
    // converges to. Every draw is a path over the grid; test statistics and
    // band widths come from the sup of these paths, so inference is uniform
    // over quantiles rather than pointwise.
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 1000, 2024)?;
    println!(
        "pivotal simulation: {} draws on a {}-point grid, f_X(x0) plug-in {:.3}",
        draws.n_draws(),
        draws.grid.len(),
        draws.meta.fx_at_x0,
    );

    println!();
    println!("test                          statistic   critical   p-value   verdict");
    for (label, result) in [
        (
            "significance (standardized)",
            test_significance(&estimates, &draws, 0.95, true)?,
        ),
        (
            "significance (raw)",
            test_significance(&estimates, &draws, 0.95, false)?,
        ),
        (
            "heterogeneity (standardized)",
            test_heterogeneity(&estimates, &draws, 0.95, true)?,
        ),
        (
            "heterogeneity (raw)",
            test_heterogeneity(&estimates, &draws, 0.95, false)?,
        ),
    ] {
        println!(
            "{label:<28}  {stat:9.3}  {cv:9.3}  {p:8.4}   {verdict}",
            stat = result.statistic,
            cv = result.critical_value,
            p = result.p_value,
            verdict = if result.accepted { "accept" } else { "reject" },
        );
    }

    // The band covers the whole effect profile at once: with probability
    // 95% every grid point lies inside, so a flat line through the band is
    // evidence of a constant effect.
    let band = uniform_band(&estimates, &draws, 0.95)?;
    println!();
    println!("95% uniform band (truth is 0.5 at every tau):");
    println!("   tau   estimate      lower      upper");
    for (t, &tau) in band.grid.iter().enumerate() {
        println!(
            "  {tau:4.2}   {est:8.4}   {lo:8.4}   {hi:8.4}",
            est = band.estimates[t],
            lo = band.lower[t],
            hi = band.upper[t],
        );
    }

    Ok(())
}
