//! Monte Carlo study of the estimator and the uniform tests.
//!
//! Run with: cargo run --release --example monte_carlo
//!
//! This example demonstrates:
//! - running a cell of the simulation harness at desk scale
//! - bias, spread, and RMSE of the estimator per quantile
//! - acceptance rates of the significance and heterogeneity tests, and
//!   coverage of the uniform band
//! - a quantile-varying design where the mean estimate tracks tau
//!
//! `MonteCarloConfig::benchmark` holds the full-size configuration
//! (200 replications, 1000 pivotal draws); this example shrinks both so it
//! finishes in seconds.

use qrkd::dgp_sim::{run_monte_carlo, MonteCarloConfig, Structure};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A constant effect of 0.5: estimation quality plus test behavior.
    let mut config = MonteCarloConfig::benchmark(Structure::S1, 2000, 314);
    config.replications = 40;
    config.draws = 500;
    config.grid = qrkd::quantile_grid(0.1, 0.9, 0.1)?;

    let report = run_monte_carlo(&config)?;
    println!(
        "structure S1, n = {}, {} replications ({} failed):",
        config.n, report.replications_used, report.failures
    );
    println!("   tau   truth     mean     bias       sd     rmse");
    for cell in &report.per_tau {
        println!(
            "  {tau:4.2}   {truth:5.2}   {mean:6.3}   {bias:+6.3}   {sd:6.3}   {rmse:6.3}",
            tau = cell.tau,
            truth = cell.true_value,
            mean = cell.mean,
            bias = cell.bias,
            sd = cell.sd,
            rmse = cell.rmse,
        );
    }

    // With a true effect present, the significance test should reject in
    // most replications while the heterogeneity test keeps its 95% level.
    println!();
    println!(
        "significance acceptance    {:.2} (standardized) / {:.2} (raw)",
        report.significance_acceptance.unwrap(),
        report.significance_acceptance_raw.unwrap(),
    );
    println!(
        "heterogeneity acceptance   {:.2} (standardized) / {:.2} (raw)",
        report.heterogeneity_acceptance.unwrap(),
        report.heterogeneity_acceptance_raw.unwrap(),
    );
    println!(
        "uniform band coverage      {:.2}",
        report.band_coverage.unwrap(),
    );

    // A quantile-varying effect: the estimand at level tau equals tau, so
    // the column of means should rise roughly linearly. Tests are switched
    // off here to keep the run fast.
    let mut varying = MonteCarloConfig::benchmark(Structure::S2, 1000, 159);
    varying.replications = 40;
    varying.run_tests = false;
    varying.grid = qrkd::quantile_grid(0.1, 0.9, 0.2)?;

    let report = run_monte_carlo(&varying)?;
    println!();
    println!("structure S2, n = {}, effect(tau) = tau:", varying.n);
    println!("   tau    mean");
    for cell in &report.per_tau {
        println!("  {tau:4.2}   {mean:5.3}", tau = cell.tau, mean = cell.mean);
    }

    Ok(())
}
