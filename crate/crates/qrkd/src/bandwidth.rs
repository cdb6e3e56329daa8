//! Data-driven per-quantile bandwidth selection.
//!
//! The selection rule balances the squared bias of the local quantile slope
//! against its variance: `MSE(h) = h^2 C1^2 + C2 / (n h^3)`, minimized at
//! `h* = ((3/2) C2 / C1^2)^{1/5} n^{-1/5}`. The curvature constant `C1`
//! comes from a global one-sided quadratic pilot fit, evaluated at the
//! quadratic-coefficient scale (half the second derivative); the variance
//! constant `C2` needs pilot estimates of the running-variable density and
//! of the conditional outcome density at the pilot quantile level. Pilot
//! bandwidths are a Silverman-type rule for `f_X` and the
//! Bashtannyk-Hyndman global rules for `f_{Y|X}`.
//!
//! Per-quantile bandwidths are expressed as ratios `c(tau)` of a base scale
//! (the rule evaluated at the grid median) and clipped to a bounded range,
//! which keeps the bandwidth profile well behaved at extreme quantiles
//! where the pilot curvature can collapse.

use crate::local_fit::{self, KinkDesign, PilotCurvature, Sample};
use crate::{kernel_math, Error, Result};
use nalgebra::{Cholesky, DVector, Dyn};
use serde::Serialize;
use std::sync::OnceLock;

/// Lower clip for the bandwidth ratio `c(tau)`.
pub const C_RATIO_MIN: f64 = 0.2;
/// Upper clip for the bandwidth ratio `c(tau)`.
pub const C_RATIO_MAX: f64 = 5.0;

/// Pilot density bandwidths and the sample scales behind them.
#[derive(Debug, Clone, Serialize)]
pub struct DensityPilots {
    /// Silverman-type bandwidth for the running-variable density.
    pub h_x: f64,
    /// Bashtannyk-Hyndman outcome bandwidth for the conditional density.
    pub h_bar_y: f64,
    /// Bashtannyk-Hyndman running-variable bandwidth for the conditional
    /// density.
    pub h_bar_x: f64,
    /// Kernel density estimate of `f_X` at the kink.
    pub fx_at_x0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Ordinary least squares slope of `y` on `x`.
    pub d_slope: f64,
    /// True when the Bashtannyk-Hyndman rule was infeasible and both its
    /// bandwidths fell back to the Silverman value.
    pub bh_fallback: bool,
}

/// Diagnostic flags for one grid point of a bandwidth plan.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TauFlags {
    /// The pilot curvature was below the floor, so the rule was skipped.
    pub curvature_degenerate: bool,
    /// The bandwidth was truncated at half the running-variable range.
    pub capped: bool,
    /// The ratio `c(tau)` hit one of its clip bounds.
    pub ratio_clipped: bool,
}

/// Per-quantile bandwidths expressed around a base scale.
#[derive(Debug, Clone, Serialize)]
pub struct BandwidthPlan {
    pub grid: Vec<f64>,
    /// Final bandwidth at each grid point, `c(tau) * base_h`.
    pub h_per_tau: Vec<f64>,
    /// The rule evaluated at the grid median.
    pub base_h: f64,
    /// Clipped ratios `h(tau) / base_h`.
    pub c_of_tau: Vec<f64>,
    pub flags: Vec<TauFlags>,
}

impl BandwidthPlan {
    /// The bandwidth at grid index `t`.
    pub fn h(&self, t: usize) -> f64 {
        self.h_per_tau[t]
    }
}

/// Per-quantile pilot quantities entering the selection rule.
#[derive(Debug, Clone)]
pub struct TauPilot {
    pub tau: f64,
    pub curvature: PilotCurvature,
    /// Conditional density estimate at the pilot level `alpha_check(tau)`.
    pub fyx_at_alpha_check: f64,
}

/// Everything the selection rule consumes besides the sample size: density
/// pilots plus the per-quantile curvature and conditional-density pilots.
///
/// Holding a `PlanPilots` fixed while the sample is enlarged isolates the
/// `n^{-1/5}` rate of the rule itself, which is how the exact rate law is
/// verified in the test suite.
#[derive(Debug, Clone)]
pub struct PlanPilots {
    pub x0: f64,
    pub density: DensityPilots,
    pub per_tau: Vec<TauPilot>,
}

struct KernelConsts {
    mu2p: f64,
    mu3p: f64,
    rk: f64,
    s2k: f64,
    silverman_c: f64,
    n1_chol: Cholesky<f64, Dyn>,
    /// Quadratic form `(j2 - j3)' N1^{-1} T1 N1^{-1} (j2 - j3)`.
    c2_qf: f64,
}

static CONSTS: OnceLock<KernelConsts> = OnceLock::new();

fn consts() -> &'static KernelConsts {
    CONSTS.get_or_init(|| {
        let mu2p = kernel_math::kernel_moment(2, kernel_math::Side::Plus);
        let mu3p = kernel_math::kernel_moment(3, kernel_math::Side::Plus);
        let rk = kernel_math::kernel_square_moment(0, kernel_math::Side::Both);
        let s2k = kernel_math::kernel_moment(2, kernel_math::Side::Both);
        let silverman_c = (2.0 * mu2p).powf(-0.4)
            * rk.powf(0.2)
            * (3.0 / (8.0 * std::f64::consts::PI.sqrt())).powf(-0.2);
        let n1 = kernel_math::design_matrix_n(1).expect("order-1 kernel design matrix");
        let t1 = kernel_math::cross_kernel_t(0.5, 0.5, &|_| 1.0, 1);
        let n1_chol = Cholesky::new(n1).expect("order-1 kernel design matrix is positive definite");
        let contrast = DVector::from_column_slice(&[0.0, 1.0, -1.0]);
        let a = n1_chol.solve(&contrast);
        let c2_qf = (a.transpose() * &t1 * &a)[(0, 0)];
        KernelConsts {
            mu2p,
            mu3p,
            rk,
            s2k,
            silverman_c,
            n1_chol,
            c2_qf,
        }
    })
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    sxy / sxx
}

/// Silverman-type bandwidth for the running-variable density, using tricube
/// kernel constants and the `n - 1` standard deviation.
///
/// # Errors
/// [`Error::ZeroVariance`] when the running variable is constant.
pub fn silverman_fx_bandwidth(sample: &Sample) -> Result<f64> {
    let sx = sample_sd(&sample.x);
    if sx <= 0.0 {
        return Err(Error::ZeroVariance {
            name: "running variable x",
        });
    }
    let n = sample.n() as f64;
    let c = consts();
    Ok((2.0 * c.mu2p).powf(-0.4)
        * c.rk.powf(0.2)
        * (3.0 / (8.0 * std::f64::consts::PI.sqrt()) / sx.powi(5)).powf(-0.2)
        * n.powf(-0.2))
}

/// The Bashtannyk-Hyndman bandwidth pair for conditional density
/// estimation.
#[derive(Debug, Clone, Copy)]
pub struct BhBandwidths {
    pub h_bar_y: f64,
    pub h_bar_x: f64,
    /// True when the rule's `v` expression was nonpositive (or the slope
    /// was zero) and both bandwidths fell back to the Silverman value.
    pub fell_back: bool,
}

/// Bashtannyk-Hyndman reference bandwidths `(h_bar_y, h_bar_x)` for the
/// conditional density of `y` given `x`.
///
/// The displayed formulas raise the regression slope `d` to fractional
/// powers, so its absolute value is used. When the rule's `v` expression is
/// nonpositive or `d = 0`, the rule has no valid solution and both
/// bandwidths fall back to [`silverman_fx_bandwidth`] with `fell_back`
/// set.
///
/// # Errors
/// [`Error::ZeroVariance`] when either variable is constant.
pub fn bh_conditional_bandwidths(sample: &Sample) -> Result<BhBandwidths> {
    let sx = sample_sd(&sample.x);
    let sy = sample_sd(&sample.y);
    if sx <= 0.0 {
        return Err(Error::ZeroVariance {
            name: "running variable x",
        });
    }
    if sy <= 0.0 {
        return Err(Error::ZeroVariance { name: "outcome y" });
    }
    let n = sample.n() as f64;
    let d = ols_slope(&sample.x, &sample.y).abs();
    let c = consts();
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let v = 0.95 * sqrt_2pi * sx.powi(3) * (3.0 * d * d * sx * sx + 8.0 * sy * sy)
        - 32.0 * sx * sx * sy * sy * (-2.0_f64).exp();
    if !(v.is_finite() && v > 0.0 && d > 0.0) {
        let h = silverman_fx_bandwidth(sample)?;
        return Ok(BhBandwidths {
            h_bar_y: h,
            h_bar_x: h,
            fell_back: true,
        });
    }
    let pi = std::f64::consts::PI;
    let h_bar_x =
        (32.0 * c.rk * c.rk * sy.powi(5) * (260.0 * pi.powi(9) * sx.powi(58)).powf(0.125)
            / (n * c.s2k.powi(2)
                * d.powf(2.5)
                * v.powf(0.75)
                * (v.sqrt() + d * (16.25 * pi * sx.powi(10)).powf(0.25))))
        .powf(1.0 / 6.0);
    let h_bar_y = (d * d * v / (2.85 * sqrt_2pi * sx.powi(5))).powf(0.25) * h_bar_x;
    Ok(BhBandwidths {
        h_bar_y,
        h_bar_x,
        fell_back: false,
    })
}

/// Kernel density estimate of the running variable at `x0`:
/// `(n h_x)^{-1} sum_i K((x_i - x0)/h_x)`.
pub fn kde_fx(sample: &Sample, h_x: f64, x0: f64) -> f64 {
    let total: f64 = sample
        .x
        .iter()
        .map(|&xi| kernel_math::kernel_eval((xi - x0) / h_x))
        .sum();
    total / (sample.n() as f64 * h_x)
}

/// Product-kernel conditional density estimate of `y` at `y0` given
/// `x = x0`.
///
/// # Errors
/// [`Error::EmptyWindow`] when no observation has positive kernel weight in
/// the `x` window.
pub fn cond_density_fyx(
    sample: &Sample,
    h_bar_y: f64,
    h_bar_x: f64,
    y0: f64,
    x0: f64,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..sample.n() {
        let kx = kernel_math::kernel_eval((sample.x[i] - x0) / h_bar_x);
        if kx > 0.0 {
            den += kx;
            num += kx * kernel_math::kernel_eval((sample.y[i] - y0) / h_bar_y);
        }
    }
    if den <= 0.0 {
        return Err(Error::EmptyWindow { x0, h: h_bar_x });
    }
    Ok(num / h_bar_y / den)
}

/// Normal-reference bandwidth for estimating the conditional outcome
/// density at a point, from the outcome spread inside the `x` window
/// `|x - x0| < window`.
///
/// The global Bashtannyk-Hyndman outcome bandwidth targets integrated error
/// over the whole conditional density and oversmooths its value at a single
/// point; inference needs the pointwise value, so it uses this local rule
/// instead (see the `inference` module).
///
/// # Errors
/// [`Error::EmptyWindow`] with fewer than two in-window observations;
/// [`Error::ZeroVariance`] when the windowed outcomes are constant.
pub fn pointwise_fyx_bandwidth(sample: &Sample, x0: f64, window: f64) -> Result<f64> {
    let windowed: Vec<f64> = (0..sample.n())
        .filter(|&i| (sample.x[i] - x0).abs() < window)
        .map(|i| sample.y[i])
        .collect();
    if windowed.len() < 2 {
        return Err(Error::EmptyWindow { x0, h: window });
    }
    let s = sample_sd(&windowed);
    if s <= 0.0 {
        return Err(Error::ZeroVariance {
            name: "windowed outcome y",
        });
    }
    Ok(consts().silverman_c * s * (windowed.len() as f64).powf(-0.2))
}

/// Conditional outcome density at a fitted quantile curve: the kernel
/// density at zero of the fit's residuals `y_i - fit(x_i)`, windowed in `x`
/// around the kink, with a pointwise normal-reference residual bandwidth.
///
/// Centering the outcome kernel on the fitted curve instead of on the fixed
/// level `fit.alpha` keeps the drift of the conditional location across the
/// `x` window from flattening the estimate when the quantile curve is
/// steep, so this is the plug-in used for inference.
///
/// # Errors
/// Propagates [`pointwise_fyx_bandwidth`] and [`cond_density_fyx`]; in
/// particular [`Error::ZeroVariance`] when the fit interpolates every
/// in-window outcome exactly.
pub fn residual_cond_density(
    sample: &Sample,
    fit: &local_fit::LocalPolyFit,
    x0: f64,
    window: f64,
) -> Result<f64> {
    let residuals: Vec<f64> = sample
        .y
        .iter()
        .zip(&sample.x)
        .map(|(&y, &x)| y - fit.predict(x0, x))
        .collect();
    let shifted = Sample::new(residuals, sample.x.clone(), None)?;
    let h_r = pointwise_fyx_bandwidth(&shifted, x0, window)?;
    cond_density_fyx(&shifted, h_r, window, 0.0, x0)
}

/// Estimates the density pilots: Silverman and Bashtannyk-Hyndman
/// bandwidths, the `f_X` estimate at the kink, and the sample scales.
///
/// # Errors
/// Propagates [`silverman_fx_bandwidth`] and
/// [`bh_conditional_bandwidths`].
pub fn estimate_density_pilots(sample: &Sample, x0: f64) -> Result<DensityPilots> {
    let h_x = silverman_fx_bandwidth(sample)?;
    let bh = bh_conditional_bandwidths(sample)?;
    Ok(DensityPilots {
        h_x,
        h_bar_y: bh.h_bar_y,
        h_bar_x: bh.h_bar_x,
        fx_at_x0: kde_fx(sample, h_x, x0),
        sigma_x: sample_sd(&sample.x),
        sigma_y: sample_sd(&sample.y),
        d_slope: ols_slope(&sample.x, &sample.y),
        bh_fallback: bh.fell_back,
    })
}

/// Computes all pilots the selection rule needs: density pilots plus, for
/// every grid point, the global quadratic curvature fit and the conditional
/// density at its level.
///
/// # Errors
/// Propagates pilot-fit and density errors.
pub fn compute_plan_pilots(
    sample: &Sample,
    design: &KinkDesign,
    grid: &[f64],
) -> Result<PlanPilots> {
    if grid.is_empty() {
        return Err(Error::invalid("quantile grid must be nonempty"));
    }
    let density = estimate_density_pilots(sample, design.x0)?;
    let mut per_tau = Vec::with_capacity(grid.len());
    for &tau in grid {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(
                "quantile grid must lie strictly inside (0, 1)",
            ));
        }
        let curvature = local_fit::pilot_global_quadratic(sample, design, tau)?;
        let fyx_at_alpha_check = cond_density_fyx(
            sample,
            density.h_bar_y,
            density.h_bar_x,
            curvature.alpha_check,
            design.x0,
        )?;
        per_tau.push(TauPilot {
            tau,
            curvature,
            fyx_at_alpha_check,
        });
    }
    Ok(PlanPilots {
        x0: design.x0,
        density,
        per_tau,
    })
}

/// Bias constant of the selection rule at the quadratic-coefficient scale.
fn c1_hat(curvature: &PilotCurvature) -> f64 {
    let c = consts();
    let q2p = 0.5 * curvature.beta2_plus;
    let q2m = 0.5 * curvature.beta2_minus;
    let m = DVector::from_column_slice(&[(q2p + q2m) * c.mu2p, q2p * c.mu3p, -q2m * c.mu3p]);
    let solved = c.n1_chol.solve(&m);
    0.5 * (solved[1] - solved[2])
}

/// Variance constant of the selection rule.
fn c2_hat(tau: f64, fx: f64, fyx: f64) -> f64 {
    let c = consts();
    tau * (1.0 - tau) * c.c2_qf / (fx * fyx)
}

/// The MSE-optimal bandwidth at one quantile,
/// `h* = ((3/2) C2 / C1^2)^{1/5} n^{-1/5}`, capped at half the
/// running-variable range.
///
/// When the pilot curvature is below the floor
/// `1e-4 sigma_y / sigma_x^2` (the rule divides by it squared) or the
/// conditional-density pilot is not positive, the bandwidth is set to the
/// cap and flagged.
///
/// # Errors
/// [`Error::InvalidInput`] when `tau` has no entry in `pilots` or the kink
/// location disagrees with the one the pilots were built around.
pub fn mse_optimal_bandwidth(
    sample: &Sample,
    tau: f64,
    design: &KinkDesign,
    pilots: &PlanPilots,
) -> Result<(f64, TauFlags)> {
    if design.x0 != pilots.x0 {
        return Err(Error::invalid(
            "pilots were computed for a different kink location",
        ));
    }
    let entry = pilots
        .per_tau
        .iter()
        .find(|t| (t.tau - tau).abs() < 1e-9)
        .ok_or_else(|| Error::invalid(format!("no pilot entry for tau = {tau}")))?;

    let n = sample.n() as f64;
    let (x_min, x_max) = sample
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let h_max = (x_max - x_min) / 2.0;
    let eps_c = 1e-4 * pilots.density.sigma_y / (pilots.density.sigma_x * pilots.density.sigma_x);

    let mut flags = TauFlags::default();
    let c1 = c1_hat(&entry.curvature);
    let fyx = entry.fyx_at_alpha_check;
    if c1.abs() < eps_c || !(fyx > 0.0 && fyx.is_finite()) {
        flags.curvature_degenerate = true;
        flags.capped = true;
        return Ok((h_max, flags));
    }
    let c2 = c2_hat(tau, pilots.density.fx_at_x0, fyx);
    let mut h = (1.5 * c2 / (c1 * c1)).powf(0.2) * n.powf(-0.2);
    if h > h_max {
        h = h_max;
        flags.capped = true;
    }
    Ok((h, flags))
}

/// Builds the per-quantile bandwidth plan from precomputed pilots: the rule
/// at every grid point, a base scale at the grid median, and clipped ratios.
///
/// # Errors
/// Propagates [`mse_optimal_bandwidth`].
pub fn build_plan_with_pilots(
    sample: &Sample,
    design: &KinkDesign,
    grid: &[f64],
    pilots: &PlanPilots,
) -> Result<BandwidthPlan> {
    if grid.is_empty() {
        return Err(Error::invalid("quantile grid must be nonempty"));
    }
    let mut h_star = Vec::with_capacity(grid.len());
    let mut flags = Vec::with_capacity(grid.len());
    for &tau in grid {
        let (h, f) = mse_optimal_bandwidth(sample, tau, design, pilots)?;
        h_star.push(h);
        flags.push(f);
    }
    let base_h = h_star[grid.len() / 2];
    let mut c_of_tau = Vec::with_capacity(grid.len());
    let mut h_per_tau = Vec::with_capacity(grid.len());
    for (i, &h) in h_star.iter().enumerate() {
        let raw = h / base_h;
        let c = raw.clamp(C_RATIO_MIN, C_RATIO_MAX);
        if c != raw {
            flags[i].ratio_clipped = true;
        }
        c_of_tau.push(c);
        h_per_tau.push(c * base_h);
    }
    Ok(BandwidthPlan {
        grid: grid.to_vec(),
        h_per_tau,
        base_h,
        c_of_tau,
        flags,
    })
}

/// Computes pilots and builds the bandwidth plan in one call.
///
/// # Errors
/// Propagates pilot and rule errors.
pub fn build_plan(sample: &Sample, design: &KinkDesign, grid: &[f64]) -> Result<BandwidthPlan> {
    let pilots = compute_plan_pilots(sample, design, grid)?;
    build_plan_with_pilots(sample, design, grid, &pilots)
}
