//! Uniform inference across quantiles by pivotal simulation.
//!
//! The estimator's leading term at each quantile is a weighted sum of
//! check-loss score contributions `tau - 1{U_i <= tau}` with known
//! observation weights, where the `U_i` are uniform on the unit interval.
//! Because the weights depend only on the running variable and on plug-in
//! density estimates, that limit law can be simulated directly: draw fresh
//! uniforms, recompute the weighted sums across the whole quantile grid,
//! and repeat. Sharing one uniform vector across quantiles within a draw
//! preserves the dependence structure across the grid, which is what makes
//! sup-type statistics and uniform bands valid.
//!
//! The module provides the influence coefficients, the simulator, standard
//! errors across draws, two sup-type tests (significance of the quantile
//! profile and heterogeneity around its trapezoid mean), and uniform
//! confidence bands.

use crate::bandwidth::{self, BandwidthPlan};
use crate::local_fit::{KinkDesign, LocalPolyFit, Sample};
use crate::rng;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Plug-in quantities recorded with a set of pivotal draws.
#[derive(Debug, Clone, Serialize)]
pub struct PivotalMeta {
    pub seed: u64,
    pub n: usize,
    pub order: usize,
    pub slope_gap: f64,
    pub fx_at_x0: f64,
    /// Conditional density plug-in at each grid quantile.
    pub fyx_per_tau: Vec<f64>,
    pub h_per_tau: Vec<f64>,
}

/// Simulated draws from the pivotal limit process on a quantile grid.
///
/// Row `j` of `draws` is one realization of the process across the grid;
/// draws live on the scale of `sqrt(n h^3)` times the estimation error.
#[derive(Debug, Clone, Serialize)]
pub struct PivotalDraws {
    pub grid: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
    pub meta: PivotalMeta,
}

impl PivotalDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }
}

/// Standard deviations of the pivotal process across draws, per quantile.
#[derive(Debug, Clone, Serialize)]
pub struct SeEstimates {
    /// Spread of the raw process, used by the significance test and bands.
    pub significance: Vec<f64>,
    /// Spread of the trapezoid-demeaned process, used by the heterogeneity
    /// test. Empty when the grid has a single point.
    pub heterogeneity: Vec<f64>,
}

/// Which null hypothesis a sup-type test addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// The effect is zero at every grid quantile.
    Significance,
    /// The effect is constant across grid quantiles.
    Heterogeneity,
}

/// Outcome of a sup-type test against the simulated pivotal law.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub kind: TestKind,
    /// True when statistic and draws were divided by per-quantile spreads.
    pub standardized: bool,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    /// Confidence level of the critical value (for a test at size `alpha`
    /// this is `1 - alpha`).
    pub level: f64,
    pub grid: Vec<f64>,
    /// True when the statistic does not exceed the critical value.
    pub accepted: bool,
}

/// Uniform confidence band over the quantile grid.
#[derive(Debug, Clone, Serialize)]
pub struct UniformBand {
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    /// Standardized sup critical value the half-widths are built from.
    pub critical_value: f64,
}

/// Influence coefficient of every observation on the pivotal process at one
/// bandwidth: `a_i = (z_i' w) K_i / (gap sqrt(n h) fx fyx)` with
/// `w` solving the empirical design equation for the slope-difference
/// contrast.
///
/// Observations outside the kernel window get coefficient zero; when the
/// window is empty the whole vector is zero.
///
/// # Errors
/// [`Error::InvalidInput`] on nonpositive `h` or `order = 0`;
/// [`Error::ZeroDensity`] on nonpositive plug-ins;
/// [`Error::NotPositiveDefinite`] when the empirical design matrix is
/// singular on the window.
pub fn pivotal_influence(
    sample: &Sample,
    design: &KinkDesign,
    h: f64,
    order: usize,
    fx: f64,
    fyx: f64,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("bandwidth must be positive and finite"));
    }
    if order == 0 {
        return Err(Error::invalid("polynomial order must be at least 1"));
    }
    if !(fx.is_finite() && fx > 0.0) {
        return Err(Error::ZeroDensity {
            name: "running-variable density f_X",
        });
    }
    if !(fyx.is_finite() && fyx > 0.0) {
        return Err(Error::ZeroDensity {
            name: "conditional density f_Y|X",
        });
    }
    let n = sample.n();
    let k = 2 * order + 1;

    let mut weights = vec![0.0; n];
    let mut basis = vec![vec![0.0; k]; n];
    let mut any = false;
    for i in 0..n {
        let u = (sample.x[i] - design.x0) / h;
        let w = crate::kernel_math::kernel_eval(u);
        if w <= 0.0 {
            continue;
        }
        any = true;
        weights[i] = w;
        let row = &mut basis[i];
        row[0] = 1.0;
        if u != 0.0 {
            let mut pw = 1.0;
            for v in 1..=order {
                pw *= u;
                if u > 0.0 {
                    row[2 * v - 1] = pw;
                } else {
                    row[2 * v] = pw;
                }
            }
        }
    }
    if !any {
        return Ok(vec![0.0; n]);
    }

    let nh = n as f64 * h;
    let mut nmat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = &basis[i];
        for a in 0..k {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in a..k {
                nmat[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            nmat[(a, b)] = nmat[(b, a)];
        }
    }
    nmat /= nh * fx;

    let chol = Cholesky::new(nmat).ok_or(Error::NotPositiveDefinite { p: order })?;
    let mut contrast = DVector::<f64>::zeros(k);
    contrast[1] = 1.0;
    contrast[2] = -1.0;
    let wvec = chol.solve(&contrast);

    let denom = design.slope_gap() * nh.sqrt() * fx * fyx;
    let mut coefs = vec![0.0; n];
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        let mut zi = 0.0;
        for a in 0..k {
            zi += basis[i][a] * wvec[a];
        }
        coefs[i] = zi * weights[i] / denom;
    }
    Ok(coefs)
}

fn validate_plugins(grid: &[f64], fyx_per_tau: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("quantile grid must be nonempty"));
    }
    if fyx_per_tau.len() != grid.len() {
        return Err(Error::invalid(
            "conditional-density plug-ins must match the quantile grid length",
        ));
    }
    Ok(())
}

/// Simulates the pivotal process from caller-supplied density plug-ins.
///
/// Reads only the running variable, the bandwidth plan, and the plug-ins;
/// the outcomes never enter, which is the pivotal property. Draw `j` uses
/// an independent child stream of `seed` and one shared uniform vector
/// across the whole grid.
///
/// # Errors
/// Propagates [`pivotal_influence`]; [`Error::InvalidInput`] on mismatched
/// inputs or fewer than two draws.
#[allow(clippy::too_many_arguments)]
pub fn simulate_pivotal_with_plugins(
    sample: &Sample,
    design: &KinkDesign,
    plan: &BandwidthPlan,
    order: usize,
    fx: f64,
    fyx_per_tau: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<PivotalDraws> {
    validate_plugins(&plan.grid, fyx_per_tau)?;
    if n_draws < 2 {
        return Err(Error::invalid("need at least two pivotal draws"));
    }
    let n = sample.n();
    let t_len = plan.grid.len();

    let mut influence = Vec::with_capacity(t_len);
    for (t, &fyx) in fyx_per_tau.iter().enumerate() {
        let coefs = pivotal_influence(sample, design, plan.h_per_tau[t], order, fx, fyx)?;
        let nonzero: Vec<(usize, f64)> = coefs
            .into_iter()
            .enumerate()
            .filter(|&(_, a)| a != 0.0)
            .collect();
        influence.push(nonzero);
    }

    let draws: Vec<Vec<f64>> = (0..n_draws)
        .into_par_iter()
        .map(|j| {
            let mut gen = rng::generator(rng::child_seed(seed, j as u64));
            let u = rng::fill_uniform(&mut gen, n);
            let mut row = vec![0.0; t_len];
            for t in 0..t_len {
                let tau = plan.grid[t];
                let mut acc = 0.0;
                for &(i, a) in &influence[t] {
                    let score = tau - f64::from(u[i] <= tau);
                    acc += score * a;
                }
                row[t] = acc;
            }
            row
        })
        .collect();

    Ok(PivotalDraws {
        grid: plan.grid.clone(),
        draws,
        meta: PivotalMeta {
            seed,
            n,
            order,
            slope_gap: design.slope_gap(),
            fx_at_x0: fx,
            fyx_per_tau: fyx_per_tau.to_vec(),
            h_per_tau: plan.h_per_tau.clone(),
        },
    })
}

/// Simulates the pivotal process, computing the density plug-ins from the
/// sample: the kernel density of the running variable at the kink, and the
/// conditional outcome density at each fitted quantile level estimated from
/// that fit's residuals with a pointwise normal-reference bandwidth.
///
/// `fits` supplies the fitted quantile curves and must align with the
/// plan's grid.
///
/// # Errors
/// Propagates pilot, density, and simulation errors.
pub fn simulate_pivotal(
    sample: &Sample,
    design: &KinkDesign,
    plan: &BandwidthPlan,
    fits: &[LocalPolyFit],
    n_draws: usize,
    seed: u64,
) -> Result<PivotalDraws> {
    if fits.len() != plan.grid.len() {
        return Err(Error::invalid("fits must match the quantile grid length"));
    }
    let order = fits
        .first()
        .map(|f| f.p)
        .ok_or_else(|| Error::invalid("quantile grid must be nonempty"))?;
    if fits.iter().any(|f| f.p != order) {
        return Err(Error::invalid("fits must share one polynomial order"));
    }
    let pilots = bandwidth::estimate_density_pilots(sample, design.x0)?;
    let mut fyx_per_tau = Vec::with_capacity(fits.len());
    for fit in fits {
        fyx_per_tau.push(bandwidth::residual_cond_density(
            sample,
            fit,
            design.x0,
            pilots.h_bar_x,
        )?);
    }
    simulate_pivotal_with_plugins(
        sample,
        design,
        plan,
        order,
        pilots.fx_at_x0,
        &fyx_per_tau,
        n_draws,
        seed,
    )
}

/// Trapezoid-rule weights on an equally spaced grid of `t` points; they sum
/// to one and halve the endpoints.
fn trapezoid_weights(t: usize) -> Vec<f64> {
    let denom = (t - 1) as f64;
    let mut w = vec![1.0 / denom; t];
    w[0] = 0.5 / denom;
    w[t - 1] = 0.5 / denom;
    w
}

fn column_sd(draws: &[Vec<f64>], t: usize) -> f64 {
    let m = draws.len();
    let mean = draws.iter().map(|row| row[t]).sum::<f64>() / m as f64;
    let ss: f64 = draws
        .iter()
        .map(|row| (row[t] - mean) * (row[t] - mean))
        .sum();
    (ss / (m - 1) as f64).sqrt()
}

/// Demeans each draw row by its trapezoid average across the grid.
fn demean_rows(draws: &PivotalDraws) -> Vec<Vec<f64>> {
    let tw = trapezoid_weights(draws.grid.len());
    draws
        .draws
        .iter()
        .map(|row| {
            let mean: f64 = row.iter().zip(&tw).map(|(v, w)| v * w).sum();
            row.iter().map(|v| v - mean).collect()
        })
        .collect()
}

/// Per-quantile standard deviations of the pivotal draws, raw and
/// trapezoid-demeaned.
///
/// # Errors
/// [`Error::InvalidInput`] with fewer than two draws;
/// [`Error::DegenerateDraws`] when a column has zero or non-finite spread.
pub fn se_from_draws(draws: &PivotalDraws) -> Result<SeEstimates> {
    if draws.n_draws() < 2 {
        return Err(Error::invalid("need at least two pivotal draws"));
    }
    let t_len = draws.grid.len();
    let mut significance = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let s = column_sd(&draws.draws, t);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::DegenerateDraws { tau: draws.grid[t] });
        }
        significance.push(s);
    }
    let heterogeneity = if t_len >= 2 {
        let centered = demean_rows(draws);
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s = column_sd(&centered, t);
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::DegenerateDraws { tau: draws.grid[t] });
            }
            out.push(s);
        }
        out
    } else {
        Vec::new()
    };
    Ok(SeEstimates {
        significance,
        heterogeneity,
    })
}

/// Order statistic of the simulated sup distribution at confidence `level`;
/// zero when `level` is zero.
fn critical_value(sups: &[f64], level: f64) -> f64 {
    let m = sups.len();
    let idx = (level * m as f64).ceil() as i64 - 1;
    if idx < 0 {
        return 0.0;
    }
    let mut sorted = sups.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sup statistics"));
    sorted[(idx as usize).min(m - 1)]
}

fn p_value(sups: &[f64], statistic: f64) -> f64 {
    let exceed = sups.iter().filter(|&&s| s >= statistic).count();
    (1 + exceed) as f64 / (sups.len() + 1) as f64
}

fn validate_test_inputs(estimates: &[f64], draws: &PivotalDraws, level: f64) -> Result<()> {
    if estimates.len() != draws.grid.len() {
        return Err(Error::invalid(
            "estimates must match the quantile grid length",
        ));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::invalid("confidence level must lie in [0, 1)"));
    }
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("estimates must be finite"));
    }
    Ok(())
}

/// Per-quantile scale `sqrt(n h^3)` converting estimates to the draws'
/// scale.
fn tau_scales(meta: &PivotalMeta) -> Vec<f64> {
    meta.h_per_tau
        .iter()
        .map(|&h| (meta.n as f64 * h * h * h).sqrt())
        .collect()
}

fn sup_test(
    kind: TestKind,
    estimates: &[f64],
    centered: &[Vec<f64>],
    draws: &PivotalDraws,
    level: f64,
    standardized: bool,
    sd: &[f64],
) -> TestResult {
    let scales = tau_scales(&draws.meta);
    let t_len = draws.grid.len();
    let stat = (0..t_len)
        .map(|t| {
            let v = scales[t] * estimates[t].abs();
            if standardized {
                v / sd[t]
            } else {
                v
            }
        })
        .fold(0.0_f64, f64::max);
    let sups: Vec<f64> = centered
        .iter()
        .map(|row| {
            (0..t_len)
                .map(|t| {
                    let v = row[t].abs();
                    if standardized {
                        v / sd[t]
                    } else {
                        v
                    }
                })
                .fold(0.0_f64, f64::max)
        })
        .collect();
    let cv = critical_value(&sups, level);
    TestResult {
        kind,
        standardized,
        statistic: stat,
        critical_value: cv,
        p_value: p_value(&sups, stat),
        level,
        grid: draws.grid.clone(),
        accepted: stat <= cv,
    }
}

/// Sup-type test of a zero effect at every grid quantile.
///
/// The statistic is the sup of `sqrt(n h^3) |estimate|` over the grid,
/// compared to the same sup over simulated draws; the standardized variant
/// divides both by the per-quantile draw spread. The null is accepted when
/// the statistic does not exceed the `level` quantile of the simulated sup
/// distribution.
///
/// # Errors
/// [`Error::InvalidInput`] on mismatched inputs; propagates
/// [`se_from_draws`] for the standardized variant.
pub fn test_significance(
    estimates: &[f64],
    draws: &PivotalDraws,
    level: f64,
    standardized: bool,
) -> Result<TestResult> {
    validate_test_inputs(estimates, draws, level)?;
    let sd = if standardized {
        se_from_draws(draws)?.significance
    } else {
        Vec::new()
    };
    Ok(sup_test(
        TestKind::Significance,
        estimates,
        &draws.draws,
        draws,
        level,
        standardized,
        &sd,
    ))
}

/// Sup-type test of a constant effect across grid quantiles.
///
/// Both the estimates and every draw row are demeaned by their trapezoid
/// average over the grid before taking sups, so a common shift across
/// quantiles does not register.
///
/// # Errors
/// [`Error::InvalidInput`] on mismatched inputs or a single-point grid;
/// propagates [`se_from_draws`] for the standardized variant.
pub fn test_heterogeneity(
    estimates: &[f64],
    draws: &PivotalDraws,
    level: f64,
    standardized: bool,
) -> Result<TestResult> {
    validate_test_inputs(estimates, draws, level)?;
    if draws.grid.len() < 2 {
        return Err(Error::invalid(
            "heterogeneity test needs at least two grid points",
        ));
    }
    let tw = trapezoid_weights(draws.grid.len());
    let est_mean: f64 = estimates.iter().zip(&tw).map(|(v, w)| v * w).sum();
    let centered_est: Vec<f64> = estimates.iter().map(|v| v - est_mean).collect();
    let centered_draws = demean_rows(draws);
    let sd = if standardized {
        se_from_draws(draws)?.heterogeneity
    } else {
        Vec::new()
    };
    Ok(sup_test(
        TestKind::Heterogeneity,
        &centered_est,
        &centered_draws,
        draws,
        level,
        standardized,
        &sd,
    ))
}

/// Uniform confidence band over the grid at confidence `level`.
///
/// Half-widths are the standardized sup critical value times the
/// per-quantile draw spread, converted back to the estimate scale by
/// `sqrt(n h^3)`. At `level = 0` the band collapses onto the estimates.
///
/// # Errors
/// [`Error::InvalidInput`] on mismatched inputs; propagates
/// [`se_from_draws`].
pub fn uniform_band(estimates: &[f64], draws: &PivotalDraws, level: f64) -> Result<UniformBand> {
    validate_test_inputs(estimates, draws, level)?;
    let sd = se_from_draws(draws)?.significance;
    let scales = tau_scales(&draws.meta);
    let t_len = draws.grid.len();
    let sups: Vec<f64> = draws
        .draws
        .iter()
        .map(|row| {
            (0..t_len)
                .map(|t| row[t].abs() / sd[t])
                .fold(0.0_f64, f64::max)
        })
        .collect();
    let cv = critical_value(&sups, level);
    let mut lower = Vec::with_capacity(t_len);
    let mut upper = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let half = cv * sd[t] / scales[t];
        lower.push(estimates[t] - half);
        upper.push(estimates[t] + half);
    }
    Ok(UniformBand {
        grid: draws.grid.clone(),
        estimates: estimates.to_vec(),
        lower,
        upper,
        level,
        critical_value: cv,
    })
}
