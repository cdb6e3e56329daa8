//! Synthetic kink designs and the Monte Carlo harness.
//!
//! The simulated design places a kink of known size in the conditional
//! quantiles of the outcome: the running variable is Gaussian, the error is
//! correlated with it (so naive comparisons are confounded), and the
//! outcome adds a smooth trend plus a kink term `coef * |x - x0|` whose
//! coefficient distinguishes three structures: absent, constant across
//! quantiles, and increasing in the quantile level. All three keep the
//! conditional law of the error given the running variable Gaussian, so
//! every structural quantile and every true kink effect is available in
//! closed form.

use crate::bandwidth;
use crate::inference;
use crate::local_fit::{self, KinkDesign, Sample};
use crate::rng;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Which kink coefficient the simulated outcome carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// No kink: the true effect is zero at every quantile.
    S0,
    /// Constant kink: the true effect is 0.5 at every quantile.
    S1,
    /// Quantile-varying kink: the true effect at level `tau` is `tau`.
    S2,
}

/// Parameters of the simulated kink design.
///
/// `y = (x - x0) + 0.1 (x - x0)^2 + coef * |x - x0| + eps` with
/// `x = x0 + sigma_x z1` and `eps` jointly Gaussian with `x` at
/// correlation `rho`. The canonical configuration uses `sigma_x = 1`,
/// `sigma_eps = 0.5`, `rho = 0.5`, `x0 = 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureSpec {
    pub structure: Structure,
    pub sigma_x: f64,
    pub sigma_eps: f64,
    pub rho: f64,
    pub x0: f64,
}

impl StructureSpec {
    /// The canonical design for a given structure.
    pub fn new(structure: Structure) -> Self {
        StructureSpec {
            structure,
            sigma_x: 1.0,
            sigma_eps: 0.5,
            rho: 0.5,
            x0: 0.0,
        }
    }

    /// The benchmark estimand target, a kink design with slopes +1 and -1.
    pub fn kink_design(&self) -> KinkDesign {
        KinkDesign::new(self.x0, 1.0, -1.0).expect("unit slopes form a valid kink design")
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_x.is_finite() && self.sigma_x > 0.0) {
            return Err(Error::invalid("sigma_x must be positive and finite"));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps > 0.0) {
            return Err(Error::invalid("sigma_eps must be positive and finite"));
        }
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(Error::invalid("rho must lie strictly inside (-1, 1)"));
        }
        if !self.x0.is_finite() {
            return Err(Error::invalid("x0 must be finite"));
        }
        Ok(())
    }

    /// Standard deviation of the error conditional on the running variable.
    fn conditional_sd(&self) -> f64 {
        self.sigma_eps * (1.0 - self.rho * self.rho).sqrt()
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters")
}

/// Draws one sample of size `n` from the design, deterministically in
/// `seed`.
///
/// # Errors
/// [`Error::InvalidInput`] on invalid parameters or `n = 0`.
pub fn draw_sample(spec: &StructureSpec, n: usize, seed: u64) -> Result<Sample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let mut gen = rng::generator(seed);
    let z1 = rng::fill_standard_normal(&mut gen, n);
    let z2 = rng::fill_standard_normal(&mut gen, n);
    let cond_sd = spec.conditional_sd();
    let cond_cdf = Normal::new(0.0, cond_sd).expect("positive conditional spread");

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let d = spec.sigma_x * z1[i];
        let eps = spec.rho * spec.sigma_eps * d / spec.sigma_x + cond_sd * z2[i];
        let coef = match spec.structure {
            Structure::S0 => 0.0,
            Structure::S1 => 0.5,
            Structure::S2 => cond_cdf.cdf(eps),
        };
        x.push(spec.x0 + d);
        y.push(d + 0.1 * d * d + coef * d.abs() + eps);
    }
    Sample::new(y, x, None)
}

/// The true kink effect at quantile `tau` under the design.
pub fn true_qrkd(spec: &StructureSpec, tau: f64) -> f64 {
    match spec.structure {
        Structure::S0 => 0.0,
        Structure::S1 => 0.5,
        Structure::S2 => tau,
    }
}

/// The conditional `tau`-quantile of the outcome at running-variable value
/// `x`, in closed form.
///
/// # Errors
/// [`Error::InvalidInput`] unless `tau` lies strictly inside (0, 1).
pub fn structural_quantile(spec: &StructureSpec, tau: f64, x: f64) -> Result<f64> {
    spec.validate()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau must lie strictly inside (0, 1)"));
    }
    let d = x - spec.x0;
    let cond_sd = spec.conditional_sd();
    let q =
        spec.rho * spec.sigma_eps * d / spec.sigma_x + cond_sd * standard_normal().inverse_cdf(tau);
    let coef = match spec.structure {
        Structure::S0 => 0.0,
        Structure::S1 => 0.5,
        Structure::S2 => Normal::new(0.0, cond_sd)
            .expect("positive conditional spread")
            .cdf(q),
    };
    Ok(d + 0.1 * d * d + coef * d.abs() + q)
}

/// Configuration of a Monte Carlo run.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloConfig {
    pub structure: StructureSpec,
    pub n: usize,
    pub replications: usize,
    pub grid: Vec<f64>,
    /// Confidence level for tests and bands.
    pub level: f64,
    pub seed: u64,
    /// When false, replications stop after estimation (no pivotal draws,
    /// tests, or bands).
    pub run_tests: bool,
    /// Pivotal draws per replication.
    pub draws: usize,
    /// Local polynomial order.
    pub order: usize,
}

impl MonteCarloConfig {
    /// Benchmark defaults: 200 replications, 1000 pivotal draws, level
    /// 0.95, order 2, the standard 17-point grid.
    pub fn benchmark(structure: Structure, n: usize, seed: u64) -> Self {
        MonteCarloConfig {
            structure: StructureSpec::new(structure),
            n,
            replications: 200,
            grid: crate::quantile_grid(0.1, 0.9, 0.05).expect("standard grid is valid"),
            level: 0.95,
            seed,
            run_tests: true,
            draws: 1000,
            order: 2,
        }
    }
}

/// Summary statistics of the estimator at one grid quantile.
#[derive(Debug, Clone, Serialize)]
pub struct CellStats {
    pub tau: f64,
    pub true_value: f64,
    pub mean: f64,
    pub bias: f64,
    /// Spread across replications (population divisor).
    pub sd: f64,
    /// `sqrt(bias^2 + sd^2)`.
    pub rmse: f64,
}

/// Aggregate outcome of a Monte Carlo run.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub per_tau: Vec<CellStats>,
    /// Fraction of replications whose standardized significance test
    /// accepted, when tests ran.
    pub significance_acceptance: Option<f64>,
    /// The same for the unstandardized significance test.
    pub significance_acceptance_raw: Option<f64>,
    /// Fraction of replications whose standardized heterogeneity test
    /// accepted, when tests ran.
    pub heterogeneity_acceptance: Option<f64>,
    /// The same for the unstandardized heterogeneity test.
    pub heterogeneity_acceptance_raw: Option<f64>,
    /// Fraction of replications whose uniform band covered the true effect
    /// at every grid point, when tests ran.
    pub band_coverage: Option<f64>,
    pub failures: usize,
    pub replications_used: usize,
}

struct RepOutcome {
    estimates: Vec<f64>,
    sig_accept: Option<bool>,
    sig_accept_raw: Option<bool>,
    het_accept: Option<bool>,
    het_accept_raw: Option<bool>,
    band_covers: Option<bool>,
}

fn one_replication(config: &MonteCarloConfig, rep: usize) -> Result<RepOutcome> {
    let data_seed = rng::child_seed(config.seed, 2 * rep as u64);
    let pivotal_seed = rng::child_seed(config.seed, 2 * rep as u64 + 1);
    let sample = draw_sample(&config.structure, config.n, data_seed)?;
    let design = config.structure.kink_design();
    let plan = bandwidth::build_plan(&sample, &design, &config.grid)?;

    let mut fits = Vec::with_capacity(config.grid.len());
    let mut estimates = Vec::with_capacity(config.grid.len());
    for (t, &tau) in config.grid.iter().enumerate() {
        let fit = local_fit::fit_local_poly(&sample, &design, tau, plan.h(t), config.order)?;
        let point = local_fit::qrkd_point(fit, &design);
        estimates.push(point.value);
        fits.push(point.fit);
    }

    if !config.run_tests {
        return Ok(RepOutcome {
            estimates,
            sig_accept: None,
            sig_accept_raw: None,
            het_accept: None,
            het_accept_raw: None,
            band_covers: None,
        });
    }

    let draws =
        inference::simulate_pivotal(&sample, &design, &plan, &fits, config.draws, pivotal_seed)?;
    let sig = inference::test_significance(&estimates, &draws, config.level, true)?;
    let sig_raw = inference::test_significance(&estimates, &draws, config.level, false)?;
    let het = inference::test_heterogeneity(&estimates, &draws, config.level, true)?;
    let het_raw = inference::test_heterogeneity(&estimates, &draws, config.level, false)?;
    let band = inference::uniform_band(&estimates, &draws, config.level)?;
    let covers = config.grid.iter().enumerate().all(|(t, &tau)| {
        let truth = true_qrkd(&config.structure, tau);
        band.lower[t] <= truth && truth <= band.upper[t]
    });

    Ok(RepOutcome {
        estimates,
        sig_accept: Some(sig.accepted),
        sig_accept_raw: Some(sig_raw.accepted),
        het_accept: Some(het.accepted),
        het_accept_raw: Some(het_raw.accepted),
        band_covers: Some(covers),
    })
}

fn rate(flags: &[Option<bool>]) -> Option<f64> {
    let known: Vec<bool> = flags.iter().flatten().copied().collect();
    if known.is_empty() {
        return None;
    }
    Some(known.iter().filter(|&&b| b).count() as f64 / known.len() as f64)
}

/// Runs the Monte Carlo study: independent replications of draw, bandwidth
/// plan, estimation, and (optionally) pivotal tests and bands, then
/// aggregates bias, spread, and acceptance rates.
///
/// Replications use child seeds of `config.seed` and are aggregated in
/// replication order, so the report does not depend on the number of
/// worker threads.
///
/// # Errors
/// [`Error::InvalidInput`] on an invalid configuration;
/// [`Error::TooManyFailures`] when more than 5 percent of replications
/// fail. Failed replications below that threshold are dropped from the
/// aggregates and counted in `failures`.
pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if config.replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if config.grid.is_empty() {
        return Err(Error::invalid("quantile grid must be nonempty"));
    }
    if config.run_tests && config.draws < 2 {
        return Err(Error::invalid("need at least two pivotal draws"));
    }

    let outcomes: Vec<Result<RepOutcome>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| one_replication(config, rep))
        .collect();

    let total = config.replications;
    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    if failed as f64 > 0.05 * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let used: Vec<RepOutcome> = outcomes.into_iter().filter_map(|r| r.ok()).collect();

    let t_len = config.grid.len();
    let r_used = used.len() as f64;
    let mut per_tau = Vec::with_capacity(t_len);
    for (t, &tau) in config.grid.iter().enumerate() {
        let truth = true_qrkd(&config.structure, tau);
        let mean = used.iter().map(|o| o.estimates[t]).sum::<f64>() / r_used;
        let var = used
            .iter()
            .map(|o| (o.estimates[t] - mean) * (o.estimates[t] - mean))
            .sum::<f64>()
            / r_used;
        let bias = mean - truth;
        let sd = var.sqrt();
        per_tau.push(CellStats {
            tau,
            true_value: truth,
            mean,
            bias,
            sd,
            rmse: (bias * bias + sd * sd).sqrt(),
        });
    }

    let sig_flags: Vec<Option<bool>> = used.iter().map(|o| o.sig_accept).collect();
    let sig_raw_flags: Vec<Option<bool>> = used.iter().map(|o| o.sig_accept_raw).collect();
    let het_flags: Vec<Option<bool>> = used.iter().map(|o| o.het_accept).collect();
    let het_raw_flags: Vec<Option<bool>> = used.iter().map(|o| o.het_accept_raw).collect();
    let band_flags: Vec<Option<bool>> = used.iter().map(|o| o.band_covers).collect();

    Ok(MonteCarloReport {
        config: config.clone(),
        per_tau,
        significance_acceptance: rate(&sig_flags),
        significance_acceptance_raw: rate(&sig_raw_flags),
        heterogeneity_acceptance: rate(&het_flags),
        heterogeneity_acceptance_raw: rate(&het_raw_flags),
        band_coverage: rate(&band_flags),
        failures: failed,
        replications_used: used.len(),
    })
}
