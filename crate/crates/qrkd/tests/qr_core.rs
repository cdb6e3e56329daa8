mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use qrkd::qr_core::{check_loss, solve_weighted_qr, CheckLossProblem, SolveStatus, DEFAULT_TOL};
use qrkd::Error;
use rand::Rng;

fn intercept_only(y: &[f64], w: &[f64], tau: f64) -> CheckLossProblem {
    CheckLossProblem {
        responses: y.to_vec(),
        design: DMatrix::from_element(y.len(), 1, 1.0),
        weights: w.to_vec(),
        tau,
    }
}

fn objective_at(problem: &CheckLossProblem, beta: &[f64]) -> f64 {
    let k = problem.design.ncols();
    (0..problem.responses.len())
        .map(|i| {
            let fitted: f64 = (0..k).map(|j| problem.design[(i, j)] * beta[j]).sum();
            problem.weights[i] * check_loss(problem.responses[i] - fitted, problem.tau)
        })
        .sum()
}

/// Largest subgradient violation of the check-loss optimality condition,
/// giving rows with (near-)zero residual their full sign freedom.
fn subgradient_violation(problem: &CheckLossProblem, beta: &[f64]) -> f64 {
    let k = problem.design.ncols();
    let scale = problem.responses.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tie = 1e-8 * scale;
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let mut grad = 0.0;
        let mut slack = 0.0;
        for i in 0..problem.responses.len() {
            let w = problem.weights[i];
            if w == 0.0 {
                continue;
            }
            let fitted: f64 = (0..k).map(|c| problem.design[(i, c)] * beta[c]).sum();
            let r = problem.responses[i] - fitted;
            let x = w * problem.design[(i, j)];
            if r.abs() <= tie {
                slack += x.abs();
            } else if r > 0.0 {
                grad += problem.tau * x;
            } else {
                grad += (problem.tau - 1.0) * x;
            }
        }
        worst = worst.max(grad.abs() - slack);
    }
    worst
}

#[test]
fn intercept_fit_is_the_sample_quantile() {
    let y = [1.0, 2.0, 4.0];
    let w = [1.0, 1.0, 1.0];
    let sol = solve_weighted_qr(&intercept_only(&y, &w, 0.5), DEFAULT_TOL).unwrap();
    assert_abs_diff_eq!(sol.coefficients[0], 2.0, epsilon = 1e-7);
    assert_abs_diff_eq!(sol.objective, 1.5, epsilon = 1e-7);

    let sol9 = solve_weighted_qr(&intercept_only(&y, &w, 0.9), DEFAULT_TOL).unwrap();
    assert_abs_diff_eq!(sol9.coefficients[0], 4.0, epsilon = 1e-7);
}

#[test]
fn consistent_overdetermined_system_is_fit_exactly() {
    let mut gen = common::seeded(41);
    let n = 12;
    let k = 3;
    let truth = [0.7, -1.3, 2.1];
    let mut design = DMatrix::<f64>::zeros(n, k);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 1..k {
            design[(i, j)] = 2.0 * gen.random::<f64>() - 1.0;
        }
        y.push((0..k).map(|j| design[(i, j)] * truth[j]).sum());
    }
    let problem = CheckLossProblem {
        responses: y,
        design,
        weights: vec![1.0; n],
        tau: 0.3,
    };
    let sol = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
    for (j, &tj) in truth.iter().enumerate() {
        assert_abs_diff_eq!(sol.coefficients[j], tj, epsilon = 1e-6);
    }
    assert!(sol.objective < 1e-8);
}

#[test]
fn objective_matches_enumeration_oracle_on_random_problems() {
    let mut gen = common::seeded(7);
    for case in 0..25 {
        let n = 8 + (case % 9);
        let k = 1 + (case % 3);
        let tau = [0.1, 0.5, 0.9][case % 3];
        let problem = common::random_problem(&mut gen, n, k, tau);
        let sol = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
        let oracle = common::oracle_min_objective(&problem);
        assert_abs_diff_eq!(sol.objective, oracle, epsilon = 1e-8);
    }
}

#[test]
fn solution_satisfies_subgradient_conditions() {
    let mut gen = common::seeded(19);
    for case in 0..20 {
        let tau = [0.25, 0.5, 0.75, 0.9][case % 4];
        let problem = common::random_problem(&mut gen, 15, 3, tau);
        let sol = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
        let scale: f64 = problem.weights.iter().sum();
        assert!(
            subgradient_violation(&problem, &sol.coefficients) <= 1e-7 * scale.max(1.0),
            "subgradient violated on case {case}"
        );
    }
}

#[test]
fn rescaling_all_weights_leaves_the_argmin_unchanged() {
    let mut gen = common::seeded(23);
    let problem = common::random_problem(&mut gen, 14, 3, 0.4);
    let mut scaled = problem.clone();
    for w in &mut scaled.weights {
        *w *= 5.0;
    }
    let a = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
    let b = solve_weighted_qr(&scaled, DEFAULT_TOL).unwrap();
    for j in 0..3 {
        assert_abs_diff_eq!(a.coefficients[j], b.coefficients[j], epsilon = 1e-6);
    }
    assert_abs_diff_eq!(b.objective, 5.0 * a.objective, epsilon = 1e-7);
}

#[test]
fn intercept_shift_equivariance() {
    let mut gen = common::seeded(29);
    let problem = common::random_problem(&mut gen, 16, 3, 0.6);
    let mut shifted = problem.clone();
    for y in &mut shifted.responses {
        *y += 10.0;
    }
    let a = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
    let b = solve_weighted_qr(&shifted, DEFAULT_TOL).unwrap();
    assert_abs_diff_eq!(b.coefficients[0], a.coefficients[0] + 10.0, epsilon = 1e-6);
    for j in 1..3 {
        assert_abs_diff_eq!(b.coefficients[j], a.coefficients[j], epsilon = 1e-6);
    }
}

#[test]
fn no_axis_perturbation_improves_the_objective() {
    let mut gen = common::seeded(31);
    let problem = common::random_problem(&mut gen, 18, 4, 0.5);
    let sol = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
    let base = objective_at(&problem, &sol.coefficients);
    for j in 0..4 {
        for delta in [-1e-4, 1e-4] {
            let mut beta = sol.coefficients.clone();
            beta[j] += delta;
            assert!(
                objective_at(&problem, &beta) >= base - 1e-9,
                "axis perturbation improved the objective"
            );
        }
    }
}

#[test]
fn zero_weight_rows_do_not_affect_the_solution() {
    let mut gen = common::seeded(37);
    let problem = common::random_problem(&mut gen, 12, 2, 0.5);
    let mut padded = problem.clone();
    let n = padded.responses.len();
    let mut design = DMatrix::<f64>::zeros(n + 2, 2);
    design.view_mut((0, 0), (n, 2)).copy_from(&problem.design);
    design[(n, 0)] = 1.0;
    design[(n, 1)] = 50.0;
    design[(n + 1, 0)] = 1.0;
    design[(n + 1, 1)] = -50.0;
    padded.design = design;
    padded.responses.push(1e6);
    padded.responses.push(-1e6);
    padded.weights.push(0.0);
    padded.weights.push(0.0);

    let a = solve_weighted_qr(&problem, DEFAULT_TOL).unwrap();
    let b = solve_weighted_qr(&padded, DEFAULT_TOL).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn duplicate_column_reports_rank_deficiency() {
    let y = vec![1.0, 2.0, 3.0, 4.0];
    let mut design = DMatrix::<f64>::zeros(4, 3);
    for i in 0..4 {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = i as f64;
        design[(i, 2)] = 2.0 * i as f64;
    }
    let problem = CheckLossProblem {
        responses: y,
        design,
        weights: vec![1.0; 4],
        tau: 0.5,
    };
    match solve_weighted_qr(&problem, DEFAULT_TOL) {
        Err(Error::RankDeficient { rank, cols, .. }) => {
            assert_eq!(cols, 3);
            assert!(rank < 3);
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn too_few_positive_weights_is_rank_deficient() {
    let problem = CheckLossProblem {
        responses: vec![1.0, 2.0, 3.0],
        design: DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -0.5, 1.0, 0.25]),
        weights: vec![1.0, 0.0, 0.0],
        tau: 0.5,
    };
    assert!(matches!(
        solve_weighted_qr(&problem, DEFAULT_TOL),
        Err(Error::RankDeficient { .. })
    ));
}

#[test]
fn even_median_is_flagged_degenerate() {
    let sol =
        solve_weighted_qr(&intercept_only(&[0.0, 1.0], &[1.0, 1.0], 0.5), DEFAULT_TOL).unwrap();
    assert_eq!(sol.status, SolveStatus::DegenerateOptimal);
    assert_abs_diff_eq!(sol.objective, 0.5, epsilon = 1e-7);
    assert!((-1e-7..=1.0 + 1e-7).contains(&sol.coefficients[0]));
}

#[test]
fn invalid_inputs_are_rejected() {
    let base = intercept_only(&[1.0, 2.0], &[1.0, 1.0], 0.5);

    let mut bad_tau = base.clone();
    bad_tau.tau = 1.0;
    assert!(matches!(
        solve_weighted_qr(&bad_tau, DEFAULT_TOL),
        Err(Error::InvalidInput { .. })
    ));

    let mut bad_w = base.clone();
    bad_w.weights[0] = -1.0;
    assert!(matches!(
        solve_weighted_qr(&bad_w, DEFAULT_TOL),
        Err(Error::InvalidInput { .. })
    ));

    let mut bad_len = base.clone();
    bad_len.weights.pop();
    assert!(matches!(
        solve_weighted_qr(&bad_len, DEFAULT_TOL),
        Err(Error::InvalidInput { .. })
    ));

    let mut bad_y = base;
    bad_y.responses[0] = f64::NAN;
    assert!(matches!(
        solve_weighted_qr(&bad_y, DEFAULT_TOL),
        Err(Error::InvalidInput { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_problems_match_the_oracle(
        seed in 0u64..10_000,
        n in 6usize..12,
        k in 1usize..4,
        tau_pick in 0usize..3,
    ) {
        let tau = [0.1, 0.5, 0.9][tau_pick];
        let mut gen = common::seeded(seed);
        let problem = common::random_problem(&mut gen, n, k, tau);
        let active = problem.weights.iter().filter(|&&w| w > 0.0).count();
        prop_assume!(active >= k + 2);
        let sol = match solve_weighted_qr(&problem, DEFAULT_TOL) {
            Ok(sol) => sol,
            Err(Error::RankDeficient { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(format!("solver error: {e}"))),
        };
        let oracle = common::oracle_min_objective(&problem);
        prop_assert!((sol.objective - oracle).abs() <= 1e-8,
            "objective {} vs oracle {}", sol.objective, oracle);
    }
}
