#![allow(dead_code)]

use nalgebra::DMatrix;
use qrkd::qr_core::{check_loss, CheckLossProblem};
use qrkd::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exact minimum of the weighted check loss by exhaustive vertex
/// enumeration.
///
/// Some minimizer of a feasible weighted quantile regression interpolates
/// `k` observations (a basic solution of the equivalent split-residual
/// linear program), so the minimum over all invertible `k`-row subsets of
/// the positively weighted rows is the global minimum. Exponential in `k`,
/// so only usable as a test oracle on small problems, but it has no
/// pivoting or degeneracy pitfalls.
pub fn oracle_min_objective(problem: &CheckLossProblem) -> f64 {
    let k = problem.design.ncols();
    let rows: Vec<usize> = (0..problem.responses.len())
        .filter(|&i| problem.weights[i] > 0.0)
        .collect();
    assert!(rows.len() >= k, "oracle needs at least k active rows");

    let objective = |beta: &nalgebra::DVector<f64>| -> f64 {
        rows.iter()
            .map(|&i| {
                let fitted: f64 = (0..k).map(|j| problem.design[(i, j)] * beta[j]).sum();
                problem.weights[i] * check_loss(problem.responses[i] - fitted, problem.tau)
            })
            .sum()
    };

    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut xb = DMatrix::<f64>::zeros(k, k);
        let mut yb = nalgebra::DVector::<f64>::zeros(k);
        for (r, &si) in subset.iter().enumerate() {
            let i = rows[si];
            for j in 0..k {
                xb[(r, j)] = problem.design[(i, j)];
            }
            yb[r] = problem.responses[i];
        }
        if let Some(beta) = xb.lu().solve(&yb) {
            if beta.iter().all(|v| v.is_finite()) {
                let obj = objective(&beta);
                if obj < best {
                    best = obj;
                }
            }
        }
        if !advance_combination(&mut subset, rows.len()) {
            break;
        }
    }
    assert!(best.is_finite(), "oracle found no invertible basis");
    best
}

/// Steps `subset` to the next k-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn advance_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// A random dense check-loss problem with an intercept column and a few
/// zero weights.
pub fn random_problem(gen: &mut ChaCha8Rng, n: usize, k: usize, tau: f64) -> CheckLossProblem {
    let mut design = DMatrix::<f64>::zeros(n, k);
    let mut responses = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 1..k {
            design[(i, j)] = 2.0 * gen.random::<f64>() - 1.0;
        }
        responses.push(4.0 * gen.random::<f64>() - 2.0);
        let w: f64 = gen.random::<f64>();
        weights.push(if w < 0.1 { 0.0 } else { 2.0 * w });
    }
    CheckLossProblem {
        responses,
        design,
        weights,
        tau,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    rng::generator(seed)
}

/// Spearman rank correlation; ranks ties by first occurrence, which is
/// enough for the strictly ordered vectors it is applied to.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    num / (da * db).sqrt()
}

/// Writes a sample as a `y,x` CSV file using shortest round-trip floats.
pub fn write_sample_csv(path: &std::path::Path, y: &[f64], x: &[f64]) {
    let mut text = String::from("y,x\n");
    for i in 0..y.len() {
        text.push_str(&format!("{},{}\n", y[i], x[i]));
    }
    std::fs::write(path, text).expect("write sample csv");
}
