//! Tricube kernel evaluation and the kernel-dependent constant matrices.
//!
//! Everything here is data-free: one-sided kernel moments, the design-limit
//! matrix `N` of the one-sided polynomial basis, and the cross-quantile
//! covariance kernel `T`. Integrals are evaluated by adaptive Gauss-Kronrod
//! quadrature to an absolute tolerance of 1e-10; callers that need these
//! matrices repeatedly should cache them, since they depend only on the
//! polynomial order (and, for `T`, the bandwidth-ratio function).

use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix};

/// Normalizing constant of the tricube kernel.
pub const TRICUBE_NORM: f64 = 70.0 / 81.0;

/// Absolute tolerance used by every quadrature in this module.
pub const QUAD_TOL: f64 = 1e-10;

/// Which half of the kernel support an integral runs over.
///
/// `Plus` integrates against the indicator `1{u > 0}`, `Minus` against
/// `1{u < 0}`, and `Both` over the whole support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
    Both,
}

/// Evaluates the tricube kernel `K(u) = (70/81)(1 - |u|^3)^3` on `|u| < 1`.
///
/// Total function: returns 0 outside the support, including at non-finite
/// input.
pub fn kernel_eval(u: f64) -> f64 {
    let au = u.abs();
    if au < 1.0 {
        let t = 1.0 - au * au * au;
        TRICUBE_NORM * t * t * t
    } else {
        0.0
    }
}

/// One-sided polynomial basis `[1, u d+, u d-, ..., u^p d+, u^p d-]`.
///
/// `d+ = 1{u > 0}` and `d- = 1{u < 0}` are strict, so at `u = 0` the vector
/// is the first standard basis vector: a point exactly at the kink informs
/// only the common intercept.
pub fn basis_vector(u: f64, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * p + 1];
    out[0] = 1.0;
    if u > 0.0 {
        let mut pw = 1.0;
        for v in 1..=p {
            pw *= u;
            out[2 * v - 1] = pw;
        }
    } else if u < 0.0 {
        let mut pw = 1.0;
        for v in 1..=p {
            pw *= u;
            out[2 * v] = pw;
        }
    }
    out
}

/// Computes `∫ u^j d_side(u) K(u) du` by adaptive quadrature.
pub fn kernel_moment(j: u32, side: Side) -> f64 {
    moment_with(j, side, &|u| kernel_eval(u))
}

/// Computes `∫ u^j d_side(u) K(u)^2 du` by adaptive quadrature.
pub fn kernel_square_moment(j: u32, side: Side) -> f64 {
    moment_with(j, side, &|u| {
        let k = kernel_eval(u);
        k * k
    })
}

fn moment_with(j: u32, side: Side, weight: &dyn Fn(f64) -> f64) -> f64 {
    let f = |u: f64| u.powi(j as i32) * weight(u);
    match side {
        Side::Plus => integrate(&f, 0.0, 1.0, QUAD_TOL),
        Side::Minus => integrate(&f, -1.0, 0.0, QUAD_TOL),
        Side::Both => integrate(&f, -1.0, 0.0, QUAD_TOL) + integrate(&f, 0.0, 1.0, QUAD_TOL),
    }
}

/// Assembles `N = ∫ ubar ubar' K(u) du` for the one-sided basis of order `p`.
///
/// Entries mixing the `d+` and `d-` halves are zero pointwise and are
/// written as exact zeros rather than integrated.
///
/// # Errors
/// Fails with [`Error::NotPositiveDefinite`] if the assembled matrix does
/// not pass a Cholesky factorization, which would signal a broken kernel
/// configuration.
pub fn design_matrix_n(p: usize) -> Result<DMatrix<f64>> {
    let m = 2 * p + 1;
    let mut n = DMatrix::<f64>::zeros(m, m);
    n[(0, 0)] = kernel_moment(0, Side::Both);
    for v in 1..=p {
        let plus = kernel_moment(v as u32, Side::Plus);
        let minus = kernel_moment(v as u32, Side::Minus);
        n[(0, 2 * v - 1)] = plus;
        n[(2 * v - 1, 0)] = plus;
        n[(0, 2 * v)] = minus;
        n[(2 * v, 0)] = minus;
        for w in 1..=p {
            n[(2 * v - 1, 2 * w - 1)] = kernel_moment((v + w) as u32, Side::Plus);
            n[(2 * v, 2 * w)] = kernel_moment((v + w) as u32, Side::Minus);
        }
    }
    if Cholesky::new(n.clone()).is_none() {
        return Err(Error::NotPositiveDefinite { p });
    }
    Ok(n)
}

/// Assembles the cross-quantile kernel matrix
/// `T(tau1, tau2) = (c(tau1) c(tau2))^{-1/2} ∫ ubar(u/c(tau1)) ubar'(u/c(tau2)) K(u/c(tau1)) K(u/c(tau2)) du`
/// for the order-`p` one-sided basis, integrating over the intersection of
/// the two scaled supports.
///
/// `c` maps a quantile to its bandwidth ratio and must be strictly positive
/// at `tau1` and `tau2`; mixed `d+`/`d-` entries are exact zeros.
pub fn cross_kernel_t(tau1: f64, tau2: f64, c: &dyn Fn(f64) -> f64, p: usize) -> DMatrix<f64> {
    let c1 = c(tau1);
    let c2 = c(tau2);
    assert!(
        c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite(),
        "bandwidth ratios must be strictly positive and finite"
    );
    let m = c1.min(c2);
    let scale = 1.0 / (c1 * c2).sqrt();
    let dim = 2 * p + 1;
    let mut t = DMatrix::<f64>::zeros(dim, dim);
    // The plus-half integral for powers (v1, v2); the minus half follows by
    // the evenness of K as (-1)^(v1+v2) times the same value.
    let plus_integral = |v1: u32, v2: u32| -> f64 {
        let f = |u: f64| {
            (u / c1).powi(v1 as i32)
                * (u / c2).powi(v2 as i32)
                * kernel_eval(u / c1)
                * kernel_eval(u / c2)
        };
        integrate(&f, 0.0, m, QUAD_TOL)
    };
    for i in 0..dim {
        for j in i..dim {
            let (v1, s1) = index_order_side(i);
            let (v2, s2) = index_order_side(j);
            let plus_ok = s1 != Side::Minus && s2 != Side::Minus;
            let minus_ok = s1 != Side::Plus && s2 != Side::Plus;
            if !plus_ok && !minus_ok {
                continue;
            }
            let base = plus_integral(v1, v2);
            let mut val = 0.0;
            if plus_ok {
                val += base;
            }
            if minus_ok {
                val += if (v1 + v2) % 2 == 0 { base } else { -base };
            }
            t[(i, j)] = scale * val;
            t[(j, i)] = t[(i, j)];
        }
    }
    t
}

fn index_order_side(idx: usize) -> (u32, Side) {
    if idx == 0 {
        (0, Side::Both)
    } else if idx % 2 == 1 {
        ((idx as u32).div_ceil(2), Side::Plus)
    } else {
        (idx as u32 / 2, Side::Minus)
    }
}

// 15-point Kronrod extension of 7-point Gauss, on [-1, 1]. Positive
// abscissae only; the rule is symmetric.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let f1 = f(center - half * XGK[i]);
        let f2 = f(center + half * XGK[i]);
        kronrod += WGK[i] * (f1 + f2);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]` to absolute
/// tolerance `tol`, by interval bisection.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    integrate_depth(f, a, b, tol, 0)
}

fn integrate_depth(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth >= 48 {
        return value;
    }
    let mid = 0.5 * (a + b);
    integrate_depth(f, a, mid, 0.5 * tol, depth + 1)
        + integrate_depth(f, mid, b, 0.5 * tol, depth + 1)
}
