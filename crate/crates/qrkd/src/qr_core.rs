//! Weighted check-loss (quantile regression) minimization.
//!
//! Every fit in the crate reduces to one problem: minimize
//! `sum_i w_i rho_tau(y_i - x_i' beta)` over `beta`. The solver works on the
//! bounded dual linear program with a primal-dual interior-point method
//! (Mehrotra predictor-corrector on the `k x k` normal equations), then
//! applies a deterministic vertex-polish step: it solves exactly on the `k`
//! rows with the smallest absolute residuals and accepts that vertex only
//! when its basic dual multipliers certify optimality. The polish makes the
//! returned coefficients an exact vertex solution on non-degenerate
//! problems, far inside the requested objective tolerance.

use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

/// Default objective-gap tolerance for [`solve_weighted_qr`].
pub const DEFAULT_TOL: f64 = 1e-9;

const MAX_ITER: usize = 60;
const STEP_SHRINK: f64 = 0.99995;

/// A weighted quantile regression problem.
#[derive(Debug, Clone)]
pub struct CheckLossProblem {
    /// Response vector of length `n`.
    pub responses: Vec<f64>,
    /// Design matrix, `n` rows by `k` columns.
    pub design: DMatrix<f64>,
    /// Nonnegative observation weights of length `n`.
    pub weights: Vec<f64>,
    /// Quantile level, strictly inside `(0, 1)`.
    pub tau: f64,
}

/// Whether the argmin was unique at the solver's resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// The argmin is set-valued (dual multipliers at their bounds); the
    /// returned point is the solver's deterministic representative.
    DegenerateOptimal,
}

/// Solution of a [`CheckLossProblem`].
#[derive(Debug, Clone)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    /// Weighted check loss evaluated at `coefficients`.
    pub objective: f64,
    pub status: SolveStatus,
}

/// The check loss `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Minimizes the weighted check loss.
///
/// Rows with exactly zero weight are dropped before solving; `tol` bounds
/// the duality gap (and hence the objective error) of the accepted iterate.
/// Output is deterministic for identical inputs.
///
/// # Errors
/// [`Error::RankDeficient`] when the positively weighted design rows do not
/// span all `k` columns, and [`Error::NonConvergence`] (carrying the last
/// iterate and its gap) if the iteration limit is hit without an optimality
/// certificate.
pub fn solve_weighted_qr(problem: &CheckLossProblem, tol: f64) -> Result<QrSolution> {
    let n = problem.responses.len();
    let k = problem.design.ncols();
    if problem.design.nrows() != n || problem.weights.len() != n {
        return Err(Error::invalid(
            "responses, design rows, and weights must have equal length",
        ));
    }
    if !(problem.tau > 0.0 && problem.tau < 1.0) {
        return Err(Error::invalid("tau must lie strictly inside (0, 1)"));
    }
    if k == 0 || n < k {
        return Err(Error::invalid("design must have 1 <= k <= n columns"));
    }
    let finite = problem.responses.iter().all(|v| v.is_finite())
        && problem.weights.iter().all(|v| v.is_finite() && *v >= 0.0)
        && problem.design.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::invalid(
            "responses, design, and weights must be finite, with nonnegative weights",
        ));
    }
    let tau = problem.tau;

    // Absorb weights: keep rows with w > 0 and scale them, which leaves the
    // objective unchanged up to the dropped (zero) terms.
    let mut xt: Vec<f64> = Vec::new();
    let mut yt: Vec<f64> = Vec::new();
    for i in 0..n {
        let w = problem.weights[i];
        if w > 0.0 {
            for j in 0..k {
                xt.push(w * problem.design[(i, j)]);
            }
            yt.push(w * problem.responses[i]);
        }
    }
    let m = yt.len();
    if m < k {
        return Err(Error::RankDeficient {
            rank: m,
            cols: k,
            context: String::from(" (fewer positively weighted rows than columns)"),
        });
    }

    let row = |i: usize| &xt[i * k..(i + 1) * k];

    // Gram matrix, for the rank check and the dual initializer.
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for i in 0..m {
        let xi = row(i);
        for a in 0..k {
            for b in a..k {
                gram[(a, b)] += xi[a] * xi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let gram_chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            let svd_rank = rank_of(&xt, m, k);
            if svd_rank < k {
                return Err(Error::RankDeficient {
                    rank: svd_rank,
                    cols: k,
                    context: String::new(),
                });
            }
            bumped_cholesky(gram)
                .ok_or_else(|| Error::invalid("design Gram matrix could not be factorized"))?
        }
    };

    // Dual linear program: minimize c'a subject to X'a = (1 - tau) X'1 and
    // a in [0, 1]^m, with c = -y. The quantile coefficients are the
    // negated equality multipliers.
    let c: Vec<f64> = yt.iter().map(|v| -v).collect();
    let mut xvar = vec![1.0 - tau; m];
    let mut svar = vec![tau; m];

    let mut rhs_init = DVector::<f64>::zeros(k);
    for (i, &ci) in c.iter().enumerate() {
        let xi = row(i);
        for j in 0..k {
            rhs_init[j] += xi[j] * ci;
        }
    }
    let mut nu = gram_chol.solve(&rhs_init);

    let y_abs_max = yt.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let y_abs_mean = if m > 0 {
        yt.iter().map(|v| v.abs()).sum::<f64>() / m as f64
    } else {
        0.0
    };
    let eps0 = 1e-8 * y_abs_max.max(1.0);
    let mut z = vec![0.0; m];
    let mut wv = vec![0.0; m];
    for i in 0..m {
        let r = c[i] - dot(row(i), nu.as_slice());
        z[i] = r.max(0.0);
        wv[i] = (-r).max(0.0);
        if r.abs() < eps0 {
            z[i] += eps0;
            wv[i] += eps0;
        }
    }

    let gap_target = tol * m as f64 * y_abs_mean.max(1.0);
    let mut gap = f64::INFINITY;
    let mut d = vec![0.0; m];
    let mut dx = vec![0.0; m];
    let mut ds = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut dw = vec![0.0; m];
    let mut iterations = 0;

    for _ in 0..MAX_ITER {
        gap = dot(&z, &xvar) + dot(&wv, &svar);
        if gap < gap_target {
            break;
        }
        iterations += 1;
        for (i, di) in d.iter_mut().enumerate() {
            *di = 1.0 / (z[i] / xvar[i] + wv[i] / svar[i]);
        }

        // Normal-equations matrix, factorized once per iteration and shared
        // by the affine and corrector solves.
        let mut nmat = DMatrix::<f64>::zeros(k, k);
        for (i, &di) in d.iter().enumerate() {
            let xi = row(i);
            for a in 0..k {
                let da = di * xi[a];
                for b in a..k {
                    nmat[(a, b)] += da * xi[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                nmat[(a, b)] = nmat[(b, a)];
            }
        }
        let chol = match bumped_cholesky(nmat) {
            Some(c) => c,
            None => break,
        };

        // Affine (predictor) direction.
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..m {
            let q = d[i] * (z[i] - wv[i]);
            let xi = row(i);
            for j in 0..k {
                rhs[j] += xi[j] * q;
            }
        }
        let dy = chol.solve(&rhs);
        for i in 0..m {
            dx[i] = d[i] * (dot(row(i), dy.as_slice()) - (z[i] - wv[i]));
            ds[i] = -dx[i];
            dz[i] = -z[i] - z[i] / xvar[i] * dx[i];
            dw[i] = -wv[i] - wv[i] / svar[i] * ds[i];
        }
        let ap = step_length(&xvar, &dx).min(step_length(&svar, &ds));
        let ad = step_length(&z, &dz).min(step_length(&wv, &dw));

        let mu = gap / (2.0 * m as f64);
        let mut mua = 0.0;
        for i in 0..m {
            mua += (xvar[i] + ap * dx[i]) * (z[i] + ad * dz[i])
                + (svar[i] + ap * ds[i]) * (wv[i] + ad * dw[i]);
        }
        mua /= 2.0 * m as f64;
        let sigma = if mu > 0.0 { (mua / mu).powi(3) } else { 0.1 };

        // Corrector direction, reusing the factorization.
        let target = sigma * mu;
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..m {
            let rz = target - dx[i] * dz[i];
            let rw = target - ds[i] * dw[i];
            let q = d[i] * (z[i] - wv[i] - rz / xvar[i] + rw / svar[i]);
            let xi = row(i);
            for j in 0..k {
                rhs[j] += xi[j] * q;
            }
        }
        let dy = chol.solve(&rhs);
        for i in 0..m {
            let rz = target - dx[i] * dz[i];
            let rw = target - ds[i] * dw[i];
            dx[i] =
                d[i] * (dot(row(i), dy.as_slice()) - (z[i] - wv[i]) + rz / xvar[i] - rw / svar[i]);
            ds[i] = -dx[i];
            dz[i] = rz / xvar[i] - z[i] - z[i] / xvar[i] * dx[i];
            dw[i] = rw / svar[i] - wv[i] - wv[i] / svar[i] * ds[i];
        }
        let ap = step_length(&xvar, &dx).min(step_length(&svar, &ds));
        let ad = step_length(&z, &dz).min(step_length(&wv, &dw));
        for i in 0..m {
            xvar[i] += ap * dx[i];
            svar[i] += ap * ds[i];
            z[i] += ad * dz[i];
            wv[i] += ad * dw[i];
        }
        nu.axpy(ad, &dy, 1.0);
        gap = dot(&z, &xvar) + dot(&wv, &svar);
    }

    let converged = gap < gap_target;
    let mut beta: Vec<f64> = nu.iter().map(|v| -v).collect();
    let mut status = SolveStatus::Optimal;
    let mut certified = false;

    // Vertex polish: exact solve on the k rows closest to interpolation,
    // accepted only with a dual optimality certificate.
    if let Some((polished, polish_status)) = polish_vertex(&xt, &yt, m, k, tau, &beta) {
        beta = polished;
        status = polish_status;
        certified = true;
    }

    if !converged && !certified {
        return Err(Error::NonConvergence {
            gap,
            iterations,
            coefficients: beta,
        });
    }

    let mut objective = 0.0;
    for i in 0..n {
        let w = problem.weights[i];
        if w > 0.0 {
            let mut fit = 0.0;
            for (j, &bj) in beta.iter().enumerate() {
                fit += problem.design[(i, j)] * bj;
            }
            objective += w * check_loss(problem.responses[i] - fit, tau);
        }
    }

    Ok(QrSolution {
        coefficients: beta,
        objective,
        status,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest multiple of a descent direction that keeps `v` positive, shrunk
/// slightly away from the boundary and capped at a full step.
fn step_length(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    (STEP_SHRINK * a).min(1.0)
}

fn bumped_cholesky(mut mat: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(mat.clone()) {
        return Some(c);
    }
    let trace = mat.trace().abs().max(f64::MIN_POSITIVE);
    let mut bump = 1e-12 * trace;
    for _ in 0..3 {
        for i in 0..mat.nrows() {
            mat[(i, i)] += bump;
        }
        if let Some(c) = Cholesky::new(mat.clone()) {
            return Some(c);
        }
        bump *= 1e3;
    }
    None
}

fn rank_of(xt: &[f64], m: usize, k: usize) -> usize {
    let mat = DMatrix::<f64>::from_row_slice(m, k, xt);
    let sv = mat.singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, v| a.max(*v));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|v| **v > 1e-10 * smax).count()
}

fn polish_vertex(
    xt: &[f64],
    yt: &[f64],
    m: usize,
    k: usize,
    tau: f64,
    beta: &[f64],
) -> Option<(Vec<f64>, SolveStatus)> {
    let row = |i: usize| &xt[i * k..(i + 1) * k];
    let mut order: Vec<usize> = (0..m).collect();
    let abs_res: Vec<f64> = (0..m).map(|i| (yt[i] - dot(row(i), beta)).abs()).collect();
    order.sort_by(|&a, &b| abs_res[a].partial_cmp(&abs_res[b]).unwrap().then(a.cmp(&b)));
    let basis = &order[..k];

    let mut xb = DMatrix::<f64>::zeros(k, k);
    let mut yb = DVector::<f64>::zeros(k);
    for (bi, &i) in basis.iter().enumerate() {
        let xi = row(i);
        for j in 0..k {
            xb[(bi, j)] = xi[j];
        }
        yb[bi] = yt[i];
    }
    let max_abs = xb.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if max_abs == 0.0 {
        return None;
    }
    let lu = xb.clone().lu();
    if lu.determinant().abs() <= 1e-12 * max_abs.powi(k as i32) {
        return None;
    }
    let polished = lu.solve(&yb)?;

    let mut in_basis = vec![false; m];
    for &i in basis {
        in_basis[i] = true;
    }
    let mut g = DVector::<f64>::zeros(k);
    for i in 0..m {
        if in_basis[i] {
            continue;
        }
        let r = yt[i] - dot(row(i), polished.as_slice());
        let psi = if r > 0.0 { tau } else { tau - 1.0 };
        let xi = row(i);
        for j in 0..k {
            g[j] += xi[j] * psi;
        }
    }
    let lambda = xb.transpose().lu().solve(&(-g))?;

    let tol_l = 1e-7;
    let lo = tau - 1.0;
    let hi = tau;
    let feasible = lambda.iter().all(|&l| l >= lo - tol_l && l <= hi + tol_l);
    if !feasible {
        return None;
    }
    let at_boundary = lambda.iter().any(|&l| l <= lo + tol_l || l >= hi - tol_l);
    let status = if at_boundary {
        SolveStatus::DegenerateOptimal
    } else {
        SolveStatus::Optimal
    };
    Some((polished.iter().copied().collect(), status))
}
