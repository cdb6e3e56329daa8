//! Local polynomial quantile smoothers at the kink and the QRKD point
//! estimate.
//!
//! The smoother fits a one-sided polynomial with a common intercept: the
//! conditional quantile function is continuous at the kink, so both sides
//! share the level while every slope and curvature term is allowed to jump.
//! Basis columns carry `1/v!` factors, making each coefficient a one-sided
//! derivative estimate, and the first-order pair feeds the Wald ratio that
//! is the QRKD estimate.

use crate::qr_core::{self, CheckLossProblem, SolveStatus};
use crate::{kernel_math, Error, Result};
use nalgebra::DMatrix;

/// Observed data: outcomes, running variable, optional covariates.
#[derive(Debug, Clone)]
pub struct Sample {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Optional covariate matrix with one row per observation.
    pub covariates: Option<DMatrix<f64>>,
}

impl Sample {
    /// Validates and wraps sample arrays.
    ///
    /// # Errors
    /// Rejects length mismatches, non-finite entries, and empty covariate
    /// matrices.
    pub fn new(y: Vec<f64>, x: Vec<f64>, covariates: Option<DMatrix<f64>>) -> Result<Self> {
        if y.len() != x.len() {
            return Err(Error::invalid("y and x must have equal length"));
        }
        if y.is_empty() {
            return Err(Error::invalid(
                "sample must contain at least one observation",
            ));
        }
        if !y.iter().chain(x.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("sample entries must be finite"));
        }
        if let Some(w) = &covariates {
            if w.nrows() != y.len() || w.ncols() == 0 {
                return Err(Error::invalid(
                    "covariate matrix must have one row per observation and at least one column",
                ));
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("covariate entries must be finite"));
            }
        }
        Ok(Sample { y, x, covariates })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// The kink: its location and the two one-sided policy slopes.
#[derive(Debug, Clone, Copy)]
pub struct KinkDesign {
    pub x0: f64,
    pub slope_right: f64,
    pub slope_left: f64,
}

impl KinkDesign {
    /// # Errors
    /// The two policy slopes must differ; an un-kinked rule has no estimand.
    pub fn new(x0: f64, slope_right: f64, slope_left: f64) -> Result<Self> {
        if !(x0.is_finite() && slope_right.is_finite() && slope_left.is_finite()) {
            return Err(Error::invalid("kink design entries must be finite"));
        }
        if slope_right == slope_left {
            return Err(Error::invalid(
                "policy slopes on the two sides of the kink must differ",
            ));
        }
        Ok(KinkDesign {
            x0,
            slope_right,
            slope_left,
        })
    }

    /// The Wald-ratio denominator `slope_right - slope_left`.
    pub fn slope_gap(&self) -> f64 {
        self.slope_right - self.slope_left
    }
}

/// Coefficients of one local polynomial quantile fit.
#[derive(Debug, Clone)]
pub struct LocalPolyFit {
    pub tau: f64,
    pub h: f64,
    pub p: usize,
    /// Common intercept: the conditional quantile level at the kink.
    pub alpha: f64,
    /// One-sided derivative estimates of orders `1..=p` on the right.
    pub beta_plus: Vec<f64>,
    /// One-sided derivative estimates of orders `1..=p` on the left.
    pub beta_minus: Vec<f64>,
    /// Covariate coefficients, under the sign convention of
    /// [`COVARIATE_SIGN_NOTE`].
    pub gamma: Option<Vec<f64>>,
    /// Number of observations with strictly positive kernel weight.
    pub n_effective: usize,
    pub status: SolveStatus,
}

impl LocalPolyFit {
    /// Evaluates the fitted quantile curve at running-variable value `x`
    /// for a kink at `x0`: the common intercept plus the one-sided
    /// polynomial `sum_v beta_v (x - x0)^v / v!`, with covariates held at
    /// zero.
    pub fn predict(&self, x0: f64, x: f64) -> f64 {
        let v = x - x0;
        let coefs = if v > 0.0 {
            &self.beta_plus
        } else {
            &self.beta_minus
        };
        let mut out = self.alpha;
        let mut term = 1.0;
        for (k, c) in coefs.iter().enumerate() {
            term *= v / (k + 1) as f64;
            out += c * term;
        }
        out
    }
}

/// Sign convention for covariate coefficients: the covariates enter the
/// check-loss residual with a plus sign, so the fitted conditional quantile
/// is `alpha + sum_v (beta_v+ d+ + beta_v- d-) (x - x0)^v / v! - W' gamma`.
pub const COVARIATE_SIGN_NOTE: &str =
    "fitted quantile = alpha + polynomial - W'gamma (gamma enters the residual with a plus sign)";

/// The QRKD point estimate at one quantile.
#[derive(Debug, Clone)]
pub struct QrkdEstimate {
    pub tau: f64,
    /// `numerator / (slope_right - slope_left)`.
    pub value: f64,
    /// First-order slope difference `beta_1+ - beta_1-`.
    pub numerator: f64,
    pub fit: LocalPolyFit,
}

/// Fits the order-`p` one-sided local polynomial quantile smoother at the
/// kink with tricube weights `K((x_i - x0)/h)`.
///
/// Observations exactly at `x0` load only on the intercept. Covariates in
/// the sample are ignored here; use [`fit_local_poly_cov`] to include them.
///
/// # Errors
/// [`Error::RankDeficient`] (with `tau`, `h`, and the effective window size
/// in the message) when the kernel window cannot support the basis, plus
/// anything [`qr_core::solve_weighted_qr`] reports.
pub fn fit_local_poly(
    sample: &Sample,
    design: &KinkDesign,
    tau: f64,
    h: f64,
    p: usize,
) -> Result<LocalPolyFit> {
    fit_at_kink(sample, design, tau, h, p, false)
}

/// Fits the local polynomial quantile smoother with covariate columns
/// appended to the basis.
///
/// The returned `gamma` follows [`COVARIATE_SIGN_NOTE`]. Covariate columns
/// that are identically zero on the kernel window cannot affect the fit;
/// they are dropped, their `gamma` entries are reported as 0, and the
/// solution is flagged degenerate-optimal.
///
/// # Errors
/// [`Error::InvalidInput`] when the sample has no covariates; otherwise as
/// [`fit_local_poly`].
pub fn fit_local_poly_cov(
    sample: &Sample,
    design: &KinkDesign,
    tau: f64,
    h: f64,
    p: usize,
) -> Result<LocalPolyFit> {
    if sample.covariates.is_none() {
        return Err(Error::invalid(
            "fit_local_poly_cov requires a sample with covariates",
        ));
    }
    fit_at_kink(sample, design, tau, h, p, true)
}

fn fit_at_kink(
    sample: &Sample,
    design: &KinkDesign,
    tau: f64,
    h: f64,
    p: usize,
    with_covariates: bool,
) -> Result<LocalPolyFit> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(
            "bandwidth must be strictly positive and finite",
        ));
    }
    if p == 0 {
        return Err(Error::invalid("polynomial order must be at least 1"));
    }
    let n = sample.n();
    let weights: Vec<f64> = sample
        .x
        .iter()
        .map(|&xi| kernel_math::kernel_eval((xi - design.x0) / h))
        .collect();
    let n_effective = weights.iter().filter(|w| **w > 0.0).count();

    let k_poly = 2 * p + 1;
    let covs = if with_covariates {
        sample.covariates.as_ref()
    } else {
        None
    };
    let k_cov_all = covs.map_or(0, |w| w.ncols());

    // Covariate columns that vanish on the weighted window are dropped and
    // reported with a zero coefficient.
    let mut kept_cov: Vec<usize> = Vec::new();
    if let Some(w) = covs {
        for j in 0..k_cov_all {
            let nonzero = (0..n).any(|i| weights[i] > 0.0 && w[(i, j)] != 0.0);
            if nonzero {
                kept_cov.push(j);
            }
        }
    }
    let k = k_poly + kept_cov.len();
    if n_effective < k {
        return Err(rank_context(
            Error::RankDeficient {
                rank: n_effective,
                cols: k,
                context: String::new(),
            },
            tau,
            h,
            n_effective,
        ));
    }

    let mut mat = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let v = sample.x[i] - design.x0;
        mat[(i, 0)] = 1.0;
        let mut pw = 1.0;
        let mut fact = 1.0;
        for ord in 1..=p {
            pw *= v;
            fact *= ord as f64;
            let scaled = pw / fact;
            if v > 0.0 {
                mat[(i, 2 * ord - 1)] = scaled;
            } else if v < 0.0 {
                mat[(i, 2 * ord)] = scaled;
            }
        }
        if let Some(w) = covs {
            for (slot, &j) in kept_cov.iter().enumerate() {
                // Negated so the reported gamma matches COVARIATE_SIGN_NOTE.
                mat[(i, k_poly + slot)] = -w[(i, j)];
            }
        }
    }

    let problem = CheckLossProblem {
        responses: sample.y.clone(),
        design: mat,
        weights,
        tau,
    };
    let solution = qr_core::solve_weighted_qr(&problem, qr_core::DEFAULT_TOL)
        .map_err(|e| rank_context(e, tau, h, n_effective))?;

    let coefs = &solution.coefficients;
    let beta_plus: Vec<f64> = (1..=p).map(|v| coefs[2 * v - 1]).collect();
    let beta_minus: Vec<f64> = (1..=p).map(|v| coefs[2 * v]).collect();
    let dropped_any = covs.is_some() && kept_cov.len() < k_cov_all;
    let gamma = covs.map(|w| {
        let mut g = vec![0.0; w.ncols()];
        for (slot, &j) in kept_cov.iter().enumerate() {
            g[j] = coefs[k_poly + slot];
        }
        g
    });
    let status = if dropped_any {
        SolveStatus::DegenerateOptimal
    } else {
        solution.status
    };

    Ok(LocalPolyFit {
        tau,
        h,
        p,
        alpha: coefs[0],
        beta_plus,
        beta_minus,
        gamma,
        n_effective,
        status,
    })
}

fn rank_context(err: Error, tau: f64, h: f64, n_effective: usize) -> Error {
    match err {
        Error::RankDeficient {
            rank,
            cols,
            context,
        } => Error::RankDeficient {
            rank,
            cols,
            context: format!("{context} (tau = {tau}, h = {h}, n_effective = {n_effective})"),
        },
        other => other,
    }
}

/// Forms the QRKD point estimate from a fit: the first-order slope
/// difference divided by the policy-slope difference.
pub fn qrkd_point(fit: LocalPolyFit, design: &KinkDesign) -> QrkdEstimate {
    let numerator = fit.beta_plus[0] - fit.beta_minus[0];
    QrkdEstimate {
        tau: fit.tau,
        value: numerator / design.slope_gap(),
        numerator,
        fit,
    }
}

/// Curvature pilots from the global one-sided quadratic quantile fit.
#[derive(Debug, Clone, Copy)]
pub struct PilotCurvature {
    /// Level of the global fit at the kink.
    pub alpha_check: f64,
    /// Second-derivative estimate on the right of the kink.
    pub beta2_plus: f64,
    /// Second-derivative estimate on the left of the kink.
    pub beta2_minus: f64,
}

/// Fits the kernel-free one-sided quadratic quantile model on the full
/// sample and returns the level and the two second-derivative coefficients,
/// the curvature pilots used by bandwidth selection.
///
/// # Errors
/// [`Error::InvalidInput`] for `n < 5`; [`Error::RankDeficient`] when all
/// running-variable values lie on one side of the kink.
pub fn pilot_global_quadratic(
    sample: &Sample,
    design: &KinkDesign,
    tau: f64,
) -> Result<PilotCurvature> {
    let n = sample.n();
    if n < 5 {
        return Err(Error::invalid(
            "the global quadratic pilot needs at least 5 observations",
        ));
    }
    let mut mat = DMatrix::<f64>::zeros(n, 5);
    for i in 0..n {
        let v = sample.x[i] - design.x0;
        mat[(i, 0)] = 1.0;
        if v > 0.0 {
            mat[(i, 1)] = v;
            mat[(i, 3)] = 0.5 * v * v;
        } else if v < 0.0 {
            mat[(i, 2)] = v;
            mat[(i, 4)] = 0.5 * v * v;
        }
    }
    let problem = CheckLossProblem {
        responses: sample.y.clone(),
        design: mat,
        weights: vec![1.0; n],
        tau,
    };
    let solution = qr_core::solve_weighted_qr(&problem, qr_core::DEFAULT_TOL)?;
    Ok(PilotCurvature {
        alpha_check: solution.coefficients[0],
        beta2_plus: solution.coefficients[3],
        beta2_minus: solution.coefficients[4],
    })
}
