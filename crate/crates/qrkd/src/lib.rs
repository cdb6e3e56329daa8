//! Quantile regression kink design (QRKD) estimation and inference.
//!
//! A policy rule `b(x)` that is continuous but kinked at a known point `x0`
//! induces a kink in the conditional quantile function of the outcome. The
//! QRKD estimand at quantile `tau` is the ratio of the jump in the one-sided
//! derivatives of the conditional quantile function at `x0` to the jump in
//! the one-sided slopes of the policy rule. This crate estimates that ratio
//! on a quantile grid and provides uniform inference over the grid:
//!
//! * [`local_fit`]: one-sided local polynomial quantile smoothers with a
//!   common intercept at the kink, and the Wald-ratio point estimate.
//! * [`qr_core`]: the weighted check-loss solver behind every fit, an
//!   interior-point method with a deterministic vertex-polish step.
//! * [`kernel_math`]: the tricube kernel and the kernel-dependent constant
//!   matrices used by bandwidth selection and inference.
//! * [`bandwidth`]: per-quantile MSE-optimal bandwidth selection from pilot
//!   density and curvature estimates.
//! * [`inference`]: pivotal simulation of the limiting process, standard
//!   errors, significance and heterogeneity tests, and uniform bands.
//! * [`dgp_sim`]: synthetic kinked data generators with closed-form truths,
//!   and a Monte Carlo harness.
//! * [`cli`]: configuration, CSV ingestion, and report rendering for the
//!   `qrkd` binary.
//!
//! Estimation entry points take a [`Sample`] (outcomes, running variable,
//! optional covariates) and a [`KinkDesign`] (kink location and the two
//! policy slopes). All randomized routines are driven by explicit seeds and
//! produce identical output regardless of thread count.

pub mod bandwidth;
pub mod cli;
pub mod dgp_sim;
pub mod inference;
pub mod kernel_math;
pub mod local_fit;
pub mod qr_core;
pub mod rng;

pub use bandwidth::{BandwidthPlan, DensityPilots};
pub use dgp_sim::{MonteCarloConfig, MonteCarloReport, StructureSpec};
pub use inference::{PivotalDraws, TestResult, UniformBand};
pub use local_fit::{KinkDesign, LocalPolyFit, QrkdEstimate, Sample};

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The positively weighted design rows do not span the coefficient space.
    #[error("rank-deficient design: the positively weighted rows span {rank} of {cols} dimensions{context}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        context: String,
    },

    /// The interior-point solver stopped before reaching the duality-gap target.
    #[error("solver did not converge: duality gap {gap:.3e} after {iterations} iterations")]
    NonConvergence {
        gap: f64,
        iterations: usize,
        coefficients: Vec<f64>,
    },

    /// A kernel constant matrix failed its positive-definiteness check.
    #[error("kernel design matrix for order {p} is not positive definite")]
    NotPositiveDefinite { p: usize },

    /// A scale parameter needed by a bandwidth formula is zero.
    #[error("{name} has zero sample variance, so no bandwidth can be formed")]
    ZeroVariance { name: &'static str },

    /// No observations fall inside a kernel window that must be nonempty.
    #[error("no observations within {h} of {x0}; widen the bandwidth or check the kink location")]
    EmptyWindow { x0: f64, h: f64 },

    /// A density plug-in required to be strictly positive evaluated to zero.
    #[error("density plug-in {name} is zero at the kink; inference scaling is undefined")]
    ZeroDensity { name: &'static str },

    /// Simulated draws are constant at some grid point, so no scale exists.
    #[error("pivotal draws are degenerate at tau = {tau}: zero standard deviation across draws")]
    DegenerateDraws { tau: f64 },

    /// An argument violates a documented precondition.
    #[error("invalid input: {message}")]
    InvalidInput { message: String },

    /// Too many Monte Carlo replications failed to produce an estimate.
    #[error("{failed} of {total} replications failed, above the 5% abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    /// A data file could not be read.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data file could not be parsed into a sample.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A required column is absent from the input header.
    #[error("missing column {column:?} in input header")]
    MissingColumn { column: String },
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput {
            message: message.into(),
        }
    }

    /// Stable machine-readable label for the error variant, used in report
    /// envelopes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RankDeficient { .. } => "rank-deficient",
            Error::NonConvergence { .. } => "non-convergence",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::ZeroVariance { .. } => "zero-variance",
            Error::EmptyWindow { .. } => "empty-window",
            Error::ZeroDensity { .. } => "zero-density",
            Error::DegenerateDraws { .. } => "degenerate-draws",
            Error::InvalidInput { .. } => "invalid-input",
            Error::TooManyFailures { .. } => "too-many-failures",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::MissingColumn { .. } => "missing-column",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Builds the quantile grid `{min, min+step, …, max}`.
///
/// Grid values are rounded to ten decimal places so that repeated
/// accumulation of `step` cannot leak float noise into reports; the rounded
/// values are the ones used everywhere downstream.
///
/// # Errors
/// Rejects grids that are empty, leave `(0, 1)`, or have a nonpositive step.
pub fn quantile_grid(tau_min: f64, tau_max: f64, tau_step: f64) -> Result<Vec<f64>> {
    if !(tau_min.is_finite() && tau_max.is_finite() && tau_step.is_finite()) {
        return Err(Error::invalid("quantile grid bounds must be finite"));
    }
    if tau_step <= 0.0 {
        return Err(Error::invalid("tau step must be strictly positive"));
    }
    if tau_min > tau_max {
        return Err(Error::invalid("tau min exceeds tau max"));
    }
    let count = ((tau_max - tau_min) / tau_step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count)
        .map(|i| {
            let tau = tau_min + i as f64 * tau_step;
            (tau * 1e10).round() / 1e10
        })
        .collect();
    if grid.iter().any(|&t| t <= 0.0 || t >= 1.0) {
        return Err(Error::invalid(
            "quantile grid must lie strictly inside (0, 1)",
        ));
    }
    Ok(grid)
}
