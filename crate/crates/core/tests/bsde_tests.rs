//! Regression BSDE solver against closed-form solutions.

mod support;

use mfglab::{
    martingale_residual_check, simulate_state_paths, solve_bsde_regression, ActionSet, CaseStudy,
    PathEnsemble, RegressionBasis, ScalarFn, TimeGrid,
};

fn unit_noise_paths(n: usize, steps: usize, seed: u64) -> PathEnsemble {
    let model = CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).unwrap(),
        vec![0.3],
        1.0,
        0.0,
        0.0,
        0.0,
        ScalarFn::Tanh,
        1.0,
        ScalarFn::Zero,
        0.0,
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, steps).unwrap();
    simulate_state_paths(&model, &grid, n, &[0.3], seed).unwrap()
}

fn plain_basis() -> RegressionBasis {
    RegressionBasis {
        empirical_moments: false,
        ..RegressionBasis::default()
    }
}

#[test]
fn constant_terminal_is_reproduced_exactly() {
    let paths = unit_noise_paths(400, 10, 1);
    let terminal = vec![2.5; 400];
    let sol =
        solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &plain_basis(), None).unwrap();
    for p in 0..400 {
        for k in 0..=10 {
            assert!(
                (sol.y[[p, k]] - 2.5).abs() < 1e-10,
                "Y[{p},{k}] = {}",
                sol.y[[p, k]]
            );
        }
    }
    for v in sol.z.iter() {
        assert!(v.abs() < 1e-9, "Z should vanish for a deterministic Y");
    }
    assert!((sol.y0 - 2.5).abs() < 1e-12);
    assert!(sol.y0_se < 1e-9);
}

#[test]
fn unit_generator_integrates_time_to_go() {
    let steps = 10;
    let paths = unit_noise_paths(500, steps, 2);
    let dt = paths.grid().dt();
    let terminal = vec![0.0; 500];
    let sol =
        solve_bsde_regression(&paths, &terminal, |_, _, _| 1.0, &plain_basis(), None).unwrap();
    for k in 0..=steps {
        let want = (steps - k) as f64 * dt;
        for p in 0..500 {
            assert!(
                (sol.y[[p, k]] - want).abs() < 1e-9,
                "Y[{p},{k}] = {} want {want}",
                sol.y[[p, k]]
            );
        }
    }
    assert!((sol.y0 - 1.0).abs() < 1e-10);
}

#[test]
fn terminal_row_is_the_input_bitwise_and_mean_is_preserved() {
    let n = 4000;
    let paths = unit_noise_paths(n, 12, 3);
    let terminal: Vec<f64> = (0..n)
        .map(|p| (paths.states()[[p, 12, 0]]).sin() + 0.2)
        .collect();
    let sol =
        solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &plain_basis(), None).unwrap();
    for p in 0..n {
        assert_eq!(sol.y[[p, 12]].to_bits(), terminal[p].to_bits());
    }
    // With a vanishing driver the unpenalized intercept makes every backward
    // projection mean-preserving, so y0 is the plain terminal average.
    let mean = terminal.iter().sum::<f64>() / n as f64;
    assert!(
        (sol.y0 - mean).abs() < 1e-10,
        "y0 {} vs terminal mean {mean}",
        sol.y0
    );
}

#[test]
fn linear_terminal_recovers_state_and_unit_z() {
    let n = 20_000;
    let steps = 20;
    let paths = unit_noise_paths(n, steps, 4);
    let terminal: Vec<f64> = (0..n).map(|p| paths.states()[[p, steps, 0]]).collect();
    let sol =
        solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &plain_basis(), None).unwrap();

    // Y_t = X_t, so y0 = x0 up to the Monte-Carlo error of the terminal mean.
    let mc = 1.0 / (n as f64).sqrt();
    assert!(
        (sol.y0 - 0.3).abs() < 4.0 * mc.max(sol.y0_se),
        "y0 {} ± {} too far from 0.3",
        sol.y0,
        sol.y0_se
    );

    // Z_t = σ = 1: per-step cross-section means within 5%.
    for k in 0..steps {
        let zbar: f64 = (0..n).map(|p| sol.z[[p, k, 0]]).sum::<f64>() / n as f64;
        assert!(
            (zbar - 1.0).abs() < 0.05,
            "mean Z at step {k} is {zbar}, expected 1"
        );
    }

    // Y_{k+1} ≈ X_{k+1} has variance (k+1)·dt while the one-step innovation
    // contributes dt, so the fit's R² at step k is k/(k+1). Step 0 has a
    // deterministic design and explains nothing by construction.
    assert!(sol.r2[0].abs() < 1e-9);
    for (k, r2) in sol.r2.iter().enumerate().skip(1) {
        let want = k as f64 / (k + 1) as f64;
        assert!(
            (r2 - want).abs() < 0.05,
            "R² at step {k} is {r2}, expected ≈ {want}"
        );
    }

    // Internal residual bookkeeping agrees with the independent check.
    let check = martingale_residual_check(&sol, &paths, |_, _, _| 0.0);
    assert!((check - sol.max_martingale_residual()).abs() < 1e-12);
    assert!(check < 5e-3, "martingale residual {check}");
}

/// Driver linear in z: dY = −c·Z dt + Z dW with terminal X_T has the exact
/// solution Y_t = X_t + c·σ·(T − t).
#[test]
fn z_coupled_driver_matches_closed_form() {
    let n = 20_000;
    let steps = 20;
    let c = 0.8;
    let paths = unit_noise_paths(n, steps, 5);
    let terminal: Vec<f64> = (0..n).map(|p| paths.states()[[p, steps, 0]]).collect();
    let sol = solve_bsde_regression(&paths, &terminal, |_, _, z| c * z[0], &plain_basis(), None)
        .unwrap();
    let want = 0.3 + c; // x0 + c·σ·T
    assert!(
        (sol.y0 - want).abs() < 0.03,
        "y0 {} vs closed form {want}",
        sol.y0
    );
}

#[test]
fn solution_is_linear_in_the_terminal_condition() {
    let n = 3000;
    let paths = unit_noise_paths(n, 8, 6);
    let g1: Vec<f64> = (0..n).map(|p| paths.states()[[p, 8, 0]]).collect();
    let g2: Vec<f64> = (0..n).map(|p| (paths.states()[[p, 8, 0]]).sin()).collect();
    let g3: Vec<f64> = g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| 2.0 * a - 3.0 * b)
        .collect();
    let gen = |_: usize, _: usize, _: &[f64]| 0.0;
    let s1 = solve_bsde_regression(&paths, &g1, gen, &plain_basis(), None).unwrap();
    let s2 = solve_bsde_regression(&paths, &g2, gen, &plain_basis(), None).unwrap();
    let s3 = solve_bsde_regression(&paths, &g3, gen, &plain_basis(), None).unwrap();
    for p in (0..n).step_by(97) {
        for k in 0..=8 {
            let lin = 2.0 * s1.y[[p, k]] - 3.0 * s2.y[[p, k]];
            assert!(
                (s3.y[[p, k]] - lin).abs() < 1e-8,
                "Y[{p},{k}] breaks linearity: {} vs {lin}",
                s3.y[[p, k]]
            );
        }
    }
    assert!((s3.y0 - (2.0 * s1.y0 - 3.0 * s2.y0)).abs() < 1e-9);
}

#[test]
fn z_scales_with_the_terminal_slope() {
    let n = 10_000;
    let steps = 10;
    let paths = unit_noise_paths(n, steps, 7);
    let scale = 3.5;
    let terminal: Vec<f64> = (0..n)
        .map(|p| scale * paths.states()[[p, steps, 0]])
        .collect();
    let sol =
        solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &plain_basis(), None).unwrap();
    let zbar: f64 = sol.z.iter().sum::<f64>() / (n * steps) as f64;
    assert!(
        (zbar - scale).abs() < 0.05 * scale,
        "mean Z {zbar} vs slope {scale}"
    );
}

#[test]
fn dimension_mismatch_is_rejected() {
    let paths = unit_noise_paths(100, 5, 8);
    let short = vec![0.0; 99];
    let err = solve_bsde_regression(&paths, &short, |_, _, _| 0.0, &plain_basis(), None)
        .err()
        .expect("short terminal must fail");
    let msg = err.to_string();
    assert!(msg.contains("terminal"), "unhelpful error: {msg}");
}

#[test]
fn non_finite_terminal_is_rejected() {
    let paths = unit_noise_paths(50, 4, 9);
    let mut terminal = vec![0.0; 50];
    terminal[31] = f64::NAN;
    assert!(
        solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &plain_basis(), None).is_err()
    );
}
