mod common;

use qrkd::bandwidth::{build_plan, BandwidthPlan};
use qrkd::dgp_sim::{draw_sample, Structure, StructureSpec};
use qrkd::inference::{
    pivotal_influence, se_from_draws, simulate_pivotal, simulate_pivotal_with_plugins,
    test_heterogeneity, test_significance, uniform_band, PivotalDraws, PivotalMeta, TestKind,
};
use qrkd::kernel_math::kernel_eval;
use qrkd::local_fit::{fit_local_poly, KinkDesign, LocalPolyFit, Sample};
use qrkd::Error;

fn design_unit() -> KinkDesign {
    KinkDesign::new(0.0, 1.0, -1.0).unwrap()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut out = [0.0; 3];
    for j in 0..3 {
        let mut m = a;
        for i in 0..3 {
            m[i][j] = b[i];
        }
        out[j] = det(m) / d;
    }
    out
}

#[test]
fn influence_coefficients_match_a_hand_computation() {
    let x = vec![-0.9, -0.5, -0.2, 0.0, 0.15, 0.4, 0.7, 0.95];
    let y = vec![0.0; 8];
    let sample = Sample::new(y, x.clone(), None).unwrap();
    let design = design_unit();
    let (h, fx, fyx) = (1.0, 0.7, 1.3);

    let coefs = pivotal_influence(&sample, &design, h, 1, fx, fyx).unwrap();

    let n = x.len();
    let z: Vec<[f64; 3]> = x
        .iter()
        .map(|&v| {
            if v > 0.0 {
                [1.0, v, 0.0]
            } else if v < 0.0 {
                [1.0, 0.0, v]
            } else {
                [1.0, 0.0, 0.0]
            }
        })
        .collect();
    let k: Vec<f64> = x.iter().map(|&v| kernel_eval(v / h)).collect();
    let mut nmat = [[0.0; 3]; 3];
    for i in 0..n {
        for a in 0..3 {
            for b in 0..3 {
                nmat[a][b] += k[i] * z[i][a] * z[i][b];
            }
        }
    }
    let scale = n as f64 * h * fx;
    for row in &mut nmat {
        for v in row.iter_mut() {
            *v /= scale;
        }
    }
    let w = solve3(nmat, [0.0, 1.0, -1.0]);
    let denom = design.slope_gap() * (n as f64 * h).sqrt() * fx * fyx;
    for i in 0..n {
        let zi = z[i][0] * w[0] + z[i][1] * w[1] + z[i][2] * w[2];
        let expected = zi * k[i] / denom;
        assert!(
            (coefs[i] - expected).abs() < 1e-12,
            "i = {i}: {} vs {expected}",
            coefs[i]
        );
    }
}

#[test]
fn observations_outside_the_window_get_zero_coefficients() {
    let x = vec![-0.5, -0.2, 0.0, 0.3, 0.6, 3.0, -4.0];
    let sample = Sample::new(vec![0.0; 7], x, None).unwrap();
    let coefs = pivotal_influence(&sample, &design_unit(), 1.0, 1, 1.0, 1.0).unwrap();
    assert_eq!(coefs[5], 0.0);
    assert_eq!(coefs[6], 0.0);
    assert!(coefs[..5].iter().any(|&a| a != 0.0));
}

#[test]
fn empty_window_yields_all_zero_coefficients() {
    let sample = Sample::new(vec![0.0, 0.0], vec![5.0, -5.0], None).unwrap();
    let coefs = pivotal_influence(&sample, &design_unit(), 1.0, 2, 1.0, 1.0).unwrap();
    assert_eq!(coefs, vec![0.0, 0.0]);
}

#[test]
fn window_that_cannot_identify_slopes_is_not_positive_definite() {
    let sample = Sample::new(vec![0.0], vec![0.0], None).unwrap();
    assert!(matches!(
        pivotal_influence(&sample, &design_unit(), 1.0, 2, 1.0, 1.0),
        Err(Error::NotPositiveDefinite { p: 2 })
    ));
}

#[test]
fn influence_input_validation() {
    let sample = Sample::new(vec![0.0], vec![0.0], None).unwrap();
    let d = design_unit();
    assert!(matches!(
        pivotal_influence(&sample, &d, 0.0, 1, 1.0, 1.0),
        Err(Error::InvalidInput { .. })
    ));
    assert!(matches!(
        pivotal_influence(&sample, &d, 1.0, 0, 1.0, 1.0),
        Err(Error::InvalidInput { .. })
    ));
    assert!(matches!(
        pivotal_influence(&sample, &d, 1.0, 1, 0.0, 1.0),
        Err(Error::ZeroDensity { .. })
    ));
    assert!(matches!(
        pivotal_influence(&sample, &d, 1.0, 1, 1.0, -2.0),
        Err(Error::ZeroDensity { .. })
    ));
}

fn fitted_setup(n: usize, seed: u64) -> (Sample, KinkDesign, BandwidthPlan, Vec<LocalPolyFit>) {
    let spec = StructureSpec::new(Structure::S1);
    let sample = draw_sample(&spec, n, seed).unwrap();
    let design = spec.kink_design();
    let grid = qrkd::quantile_grid(0.1, 0.9, 0.1).unwrap();
    let plan = build_plan(&sample, &design, &grid).unwrap();
    let fits: Vec<LocalPolyFit> = grid
        .iter()
        .enumerate()
        .map(|(t, &tau)| fit_local_poly(&sample, &design, tau, plan.h(t), 2).unwrap())
        .collect();
    (sample, design, plan, fits)
}

#[test]
fn draws_are_deterministic_across_seeds_and_thread_pools() {
    let (sample, design, plan, fits) = fitted_setup(300, 17);
    let a = simulate_pivotal(&sample, &design, &plan, &fits, 50, 99).unwrap();
    let b = simulate_pivotal(&sample, &design, &plan, &fits, 50, 99).unwrap();
    assert_eq!(a.draws, b.draws);

    let c = simulate_pivotal(&sample, &design, &plan, &fits, 50, 100).unwrap();
    assert_ne!(a.draws, c.draws);

    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| simulate_pivotal(&sample, &design, &plan, &fits, 50, 99).unwrap());
    let quad = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| simulate_pivotal(&sample, &design, &plan, &fits, 50, 99).unwrap());
    assert_eq!(single.draws, a.draws);
    assert_eq!(quad.draws, a.draws);
}

#[test]
fn draws_have_zero_mean_within_monte_carlo_error() {
    let (sample, design, plan, fits) = fitted_setup(400, 23);
    let m = 500;
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, m, 7).unwrap();
    let se = se_from_draws(&draws).unwrap();
    for t in 0..draws.grid.len() {
        let mean = draws.draws.iter().map(|row| row[t]).sum::<f64>() / m as f64;
        let bound = 4.0 * se.significance[t] / (m as f64).sqrt();
        assert!(
            mean.abs() <= bound,
            "tau = {}: mean {mean} exceeds {bound}",
            draws.grid[t]
        );
    }
}

#[test]
fn draw_spread_is_stable_in_the_number_of_draws() {
    let (sample, design, plan, fits) = fitted_setup(400, 29);
    let a = simulate_pivotal(&sample, &design, &plan, &fits, 500, 11).unwrap();
    let b = simulate_pivotal(&sample, &design, &plan, &fits, 1000, 12).unwrap();
    let sa = se_from_draws(&a).unwrap();
    let sb = se_from_draws(&b).unwrap();
    for t in 0..a.grid.len() {
        let rel = (sa.significance[t] - sb.significance[t]).abs() / sb.significance[t];
        assert!(rel < 0.15, "tau = {}: relative gap {rel}", a.grid[t]);
    }
}

#[test]
fn adjacent_grid_columns_are_positively_correlated() {
    let (sample, design, plan, fits) = fitted_setup(400, 37);
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 400, 5).unwrap();
    let m = draws.n_draws() as f64;
    for t in 0..draws.grid.len() - 1 {
        let (mut ma, mut mb) = (0.0, 0.0);
        for row in &draws.draws {
            ma += row[t];
            mb += row[t + 1];
        }
        ma /= m;
        mb /= m;
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for row in &draws.draws {
            let (da, db) = (row[t] - ma, row[t + 1] - mb);
            saa += da * da;
            sbb += db * db;
            sab += da * db;
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr > 0.3, "columns {t},{}: correlation {corr}", t + 1);
    }
}

#[test]
fn permuting_outcomes_leaves_the_draws_unchanged() {
    let (sample, design, plan, fits) = fitted_setup(300, 41);
    let pilots = qrkd::bandwidth::estimate_density_pilots(&sample, 0.0).unwrap();
    let fyx: Vec<f64> = vec![0.9; plan.grid.len()];

    let mut reversed_y = sample.y.clone();
    reversed_y.reverse();
    let permuted = Sample::new(reversed_y, sample.x.clone(), None).unwrap();

    let a = simulate_pivotal_with_plugins(&sample, &design, &plan, 2, pilots.fx_at_x0, &fyx, 40, 3)
        .unwrap();
    let b =
        simulate_pivotal_with_plugins(&permuted, &design, &plan, 2, pilots.fx_at_x0, &fyx, 40, 3)
            .unwrap();
    assert_eq!(a.draws, b.draws);
    drop(fits);
}

#[test]
fn nested_grids_share_draw_columns_and_order_critical_values() {
    let spec = StructureSpec::new(Structure::S1);
    let sample = draw_sample(&spec, 400, 53).unwrap();
    let design = spec.kink_design();
    let full_grid = qrkd::quantile_grid(0.2, 0.8, 0.1).unwrap();
    let sub_grid = [0.3, 0.5, 0.7];
    let plan_full = build_plan(&sample, &design, &full_grid).unwrap();
    let sub_idx: Vec<usize> = sub_grid
        .iter()
        .map(|tau| {
            full_grid
                .iter()
                .position(|g| (g - tau).abs() < 1e-9)
                .unwrap()
        })
        .collect();
    let plan_sub = BandwidthPlan {
        grid: sub_grid.to_vec(),
        h_per_tau: sub_idx.iter().map(|&t| plan_full.h_per_tau[t]).collect(),
        base_h: plan_full.base_h,
        c_of_tau: sub_idx.iter().map(|&t| plan_full.c_of_tau[t]).collect(),
        flags: sub_idx.iter().map(|&t| plan_full.flags[t]).collect(),
    };

    let fx = 0.4;
    let fyx_full: Vec<f64> = vec![0.9; full_grid.len()];
    let fyx_sub: Vec<f64> = vec![0.9; sub_grid.len()];
    let full =
        simulate_pivotal_with_plugins(&sample, &design, &plan_full, 2, fx, &fyx_full, 200, 8)
            .unwrap();
    let sub = simulate_pivotal_with_plugins(&sample, &design, &plan_sub, 2, fx, &fyx_sub, 200, 8)
        .unwrap();

    for j in 0..200 {
        for (s, &t) in sub_idx.iter().enumerate() {
            assert_eq!(sub.draws[j][s], full.draws[j][t]);
        }
    }

    let zeros_full = vec![0.0; full_grid.len()];
    let zeros_sub = vec![0.0; sub_grid.len()];
    let cv_full = test_significance(&zeros_full, &full, 0.9, false)
        .unwrap()
        .critical_value;
    let cv_sub = test_significance(&zeros_sub, &sub, 0.9, false)
        .unwrap()
        .critical_value;
    assert!(cv_sub <= cv_full, "{cv_sub} > {cv_full}");
}

fn hand_built_draws(grid: Vec<f64>, draws: Vec<Vec<f64>>, n: usize, h: f64) -> PivotalDraws {
    let t_len = grid.len();
    PivotalDraws {
        grid,
        draws,
        meta: PivotalMeta {
            seed: 0,
            n,
            order: 1,
            slope_gap: 2.0,
            fx_at_x0: 1.0,
            fyx_per_tau: vec![1.0; t_len],
            h_per_tau: vec![h; t_len],
        },
    }
}

#[test]
fn hand_built_single_column_test_is_exact() {
    let draws = hand_built_draws(
        vec![0.5],
        vec![vec![1.0], vec![-2.0], vec![3.0], vec![-4.0]],
        1,
        1.0,
    );
    let result = test_significance(&[2.5], &draws, 0.5, false).unwrap();
    assert_eq!(result.kind, TestKind::Significance);
    assert!(!result.standardized);
    assert_eq!(result.statistic, 2.5);
    assert_eq!(result.critical_value, 2.0);
    assert_eq!(result.p_value, 0.6);
    assert!(!result.accepted);
}

#[test]
fn zero_estimates_are_always_accepted() {
    let (sample, design, plan, fits) = fitted_setup(300, 61);
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 100, 2).unwrap();
    let zeros = vec![0.0; plan.grid.len()];
    for standardized in [false, true] {
        let sig = test_significance(&zeros, &draws, 0.95, standardized).unwrap();
        assert_eq!(sig.statistic, 0.0);
        assert_eq!(sig.p_value, 1.0);
        assert!(sig.accepted);
        let het = test_heterogeneity(&zeros, &draws, 0.95, standardized).unwrap();
        assert_eq!(het.statistic, 0.0);
        assert!(het.accepted);
    }
}

#[test]
fn standard_errors_match_direct_column_statistics() {
    let (sample, design, plan, fits) = fitted_setup(300, 67);
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 200, 4).unwrap();
    let se = se_from_draws(&draws).unwrap();
    let m = draws.n_draws();
    let t_len = draws.grid.len();

    let col_sd = |data: &Vec<Vec<f64>>, t: usize| -> f64 {
        let mean = data.iter().map(|r| r[t]).sum::<f64>() / m as f64;
        let ss: f64 = data.iter().map(|r| (r[t] - mean) * (r[t] - mean)).sum();
        (ss / (m - 1) as f64).sqrt()
    };
    for t in 0..t_len {
        assert!((se.significance[t] - col_sd(&draws.draws, t)).abs() < 1e-12);
    }

    let mut tw = vec![1.0 / (t_len as f64 - 1.0); t_len];
    tw[0] *= 0.5;
    tw[t_len - 1] *= 0.5;
    let centered: Vec<Vec<f64>> = draws
        .draws
        .iter()
        .map(|row| {
            let mean: f64 = row.iter().zip(&tw).map(|(v, w)| v * w).sum();
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    for t in 0..t_len {
        assert!((se.heterogeneity[t] - col_sd(&centered, t)).abs() < 1e-12);
    }
}

#[test]
fn constant_draw_column_is_reported_degenerate() {
    let draws = hand_built_draws(
        vec![0.4, 0.6],
        vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
        10,
        1.0,
    );
    match se_from_draws(&draws) {
        Err(Error::DegenerateDraws { tau }) => assert_eq!(tau, 0.6),
        other => panic!("expected degenerate draws, got {other:?}"),
    }
}

#[test]
fn single_point_grid_rejects_the_heterogeneity_test() {
    let draws = hand_built_draws(vec![0.5], vec![vec![1.0], vec![2.0]], 10, 1.0);
    assert!(matches!(
        test_heterogeneity(&[0.3], &draws, 0.9, false),
        Err(Error::InvalidInput { .. })
    ));
}

#[test]
fn heterogeneity_ignores_constant_shifts() {
    let (sample, design, plan, fits) = fitted_setup(300, 71);
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 200, 6).unwrap();
    let flat = vec![0.7; plan.grid.len()];
    for standardized in [false, true] {
        let het = test_heterogeneity(&flat, &draws, 0.95, standardized).unwrap();
        assert!(het.statistic.abs() < 1e-12);
        assert!(het.accepted);
    }
}

#[test]
fn uniform_band_geometry() {
    let (sample, design, plan, fits) = fitted_setup(400, 73);
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 300, 9).unwrap();
    let estimates: Vec<f64> = fits
        .iter()
        .map(|f| (f.beta_plus[0] - f.beta_minus[0]) / design.slope_gap())
        .collect();

    let collapsed = uniform_band(&estimates, &draws, 0.0).unwrap();
    assert_eq!(collapsed.lower, estimates);
    assert_eq!(collapsed.upper, estimates);
    assert_eq!(collapsed.critical_value, 0.0);

    let mut previous_width = 0.0;
    for level in [0.5, 0.8, 0.95] {
        let band = uniform_band(&estimates, &draws, level).unwrap();
        for (t, &est) in estimates.iter().enumerate() {
            assert!(band.lower[t] <= est && est <= band.upper[t]);
        }
        let width = band.upper[0] - band.lower[0];
        assert!(
            width >= previous_width,
            "width not monotone at level {level}"
        );
        previous_width = width;
    }
}

#[test]
fn simulation_input_validation() {
    let (sample, design, plan, fits) = fitted_setup(300, 79);
    assert!(matches!(
        simulate_pivotal(&sample, &design, &plan, &fits, 1, 0),
        Err(Error::InvalidInput { .. })
    ));
    assert!(matches!(
        simulate_pivotal(&sample, &design, &plan, &fits[..3], 10, 0),
        Err(Error::InvalidInput { .. })
    ));
    let bad_fyx = vec![0.9; plan.grid.len() - 1];
    assert!(matches!(
        simulate_pivotal_with_plugins(&sample, &design, &plan, 2, 0.4, &bad_fyx, 10, 0),
        Err(Error::InvalidInput { .. })
    ));
    let draws = simulate_pivotal(&sample, &design, &plan, &fits, 20, 1).unwrap();
    assert!(matches!(
        test_significance(&[0.0], &draws, 0.95, false),
        Err(Error::InvalidInput { .. })
    ));
    let zeros = vec![0.0; plan.grid.len()];
    assert!(matches!(
        test_significance(&zeros, &draws, 1.0, false),
        Err(Error::InvalidInput { .. })
    ));
}
