//! Symmetric N-player particle solver: degenerate games, a two-player
//! tensor-grid PDE oracle, exchangeability, and pathwise reward consistency.

mod support;

use std::sync::OnceLock;

use mfglab::{
    solve_nplayer_particle, zsum_diagnostic, ActionSet, CaseStudy, GameModel, MeasureView,
    NPlayerOptions, NPlayerSolution, PathSlice, RegressionBasis, ScalarFn, TimeGrid,
};
use ndarray::Array2;
use support::{fd_two_player_value, HideClosedForms, OracleParams};

fn shared_two_player() -> &'static NPlayerSolution {
    static SOLUTION: OnceLock<NPlayerSolution> = OnceLock::new();
    SOLUTION.get_or_init(|| {
        let model = OracleParams::default().model();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        solve_nplayer_particle(
            &model,
            2,
            &grid,
            4_000,
            606,
            &RegressionBasis::default(),
            &NPlayerOptions::default(),
        )
        .expect("two-player oracle configuration should converge")
    })
}

#[test]
fn degenerate_game_is_identically_zero() {
    let model = CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).unwrap(),
        vec![0.0],
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
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let sol = solve_nplayer_particle(
        &model,
        4,
        &grid,
        300,
        1,
        &RegressionBasis::default(),
        &NPlayerOptions::default(),
    )
    .unwrap();
    assert!(sol.y0.value.abs() < 1e-10, "y0 = {}", sol.y0.value);
    for a in sol.controls.iter() {
        assert!(a.abs() < 1e-10);
    }
    assert!(
        sol.fp_history.len() <= 2,
        "decoupled game iterated {} times",
        sol.fp_history.len()
    );
}

#[test]
fn two_player_value_matches_the_tensor_grid_pde() {
    let params = OracleParams::default();
    let fd = fd_two_player_value(&params);
    let sol = shared_two_player();
    let tol = 0.03 * (1.0 + fd.abs()) + 3.0 * sol.y0.se;
    assert!(
        (sol.y0.value - fd).abs() < tol,
        "particle value {} ± {} vs PDE value {fd} (tol {tol})",
        sol.y0.value,
        sol.y0.se
    );
}

#[test]
fn symmetric_players_report_symmetric_values() {
    let sol = shared_two_player();
    assert!(
        sol.y0_spread() < 0.03 * (1.0 + sol.y0.value.abs()),
        "per-player values spread too far: {:?}",
        sol.y0_per_player
    );
}

#[test]
fn relabeling_players_permutes_the_solution() {
    let model = OracleParams::default().model();
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let basis = RegressionBasis::default();
    let x0 = vec![0.1, 0.4, -0.2];
    let ids = vec![0u64, 1, 2];
    let base = solve_nplayer_particle(
        &model,
        3,
        &grid,
        500,
        42,
        &basis,
        &NPlayerOptions {
            x0_per_player: Some(x0.clone()),
            stream_ids: Some(ids.clone()),
            ..NPlayerOptions::default()
        },
    )
    .unwrap();
    // Rotate the (initial state, noise stream) pairs one slot to the left.
    let rotated = solve_nplayer_particle(
        &model,
        3,
        &grid,
        500,
        42,
        &basis,
        &NPlayerOptions {
            x0_per_player: Some(vec![x0[1], x0[2], x0[0]]),
            stream_ids: Some(vec![ids[1], ids[2], ids[0]]),
            ..NPlayerOptions::default()
        },
    )
    .unwrap();
    for i in 0..3 {
        let j = (i + 1) % 3; // rotated player i carries base player j's data
        assert!(
            (rotated.y0_per_player[i] - base.y0_per_player[j]).abs() < 1e-9,
            "player {i} after relabeling: {} vs {}",
            rotated.y0_per_player[i],
            base.y0_per_player[j]
        );
        for s in (0..500).step_by(119) {
            for k in [0usize, 7, 20] {
                assert!(
                    (rotated.states[[s, k, i]] - base.states[[s, k, j]]).abs() < 1e-9,
                    "state mismatch at (s={s}, k={k}, i={i})"
                );
            }
        }
    }
}

/// The forward particles already live under the equilibrium measure, so the
/// regression value at time zero must agree with a plain pathwise reward
/// average — an estimator that never touches the backward pass.
#[test]
fn regression_value_agrees_with_pathwise_rewards() {
    let model = OracleParams::default().model();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let n = 8;
    let s_count = 3_000;
    let sol = solve_nplayer_particle(
        &model,
        n,
        &grid,
        s_count,
        77,
        &RegressionBasis::default(),
        &NPlayerOptions::default(),
    )
    .unwrap();

    let k_steps = grid.steps();
    let dt = grid.dt();
    let mut totals = Vec::with_capacity(s_count);
    let mut feats = Array2::zeros((n, 1));
    let mut acts = Array2::zeros((n, 1));
    let mut stats = vec![0.0; model.n_stats()];
    for s in 0..s_count {
        let mut scenario_total = 0.0;
        for i in 0..n {
            // Own path as a (nodes, 1) state matrix.
            let own: Array2<f64> =
                Array2::from_shape_fn((k_steps + 1, 1), |(k, _)| sol.states[[s, k, i]]);
            let mut reward = 0.0;
            for k in 0..=k_steps {
                let ka = k.min(k_steps - 1);
                for j in 0..n {
                    feats[[j, 0]] = sol.states[[s, k, j]];
                    acts[[j, 0]] = sol.controls[[s, ka, j]];
                }
                let view = MeasureView::new(feats.view(), acts.view(), None).unwrap();
                model.interaction_stats(&view, &mut stats);
                let slice = PathSlice::new(own.view(), k, &grid);
                if k < k_steps {
                    let action = [sol.controls[[s, k, i]]];
                    reward += model.running_reward(&slice, &stats, &action) * dt;
                } else {
                    reward += model.terminal_reward(&slice, &stats);
                }
            }
            scenario_total += reward;
        }
        totals.push(scenario_total / n as f64);
    }
    let mc_mean = totals.iter().sum::<f64>() / s_count as f64;
    let mc_se = {
        let var = totals
            .iter()
            .map(|r| (r - mc_mean).powi(2))
            .sum::<f64>()
            / (s_count as f64 - 1.0);
        (var / s_count as f64).sqrt()
    };
    let gap = (sol.y0.value - mc_mean).abs();
    let se = (mc_se.powi(2) + sol.y0.se.powi(2)).sqrt();
    assert!(
        gap < 3.0 * se + 0.01 * (1.0 + mc_mean.abs()),
        "regression value {} ± {} vs pathwise mean {mc_mean} ± {mc_se}",
        sol.y0.value,
        sol.y0.se
    );
}

#[test]
fn zsum_matches_the_single_player_integral_and_shrinks_with_n() {
    let model = OracleParams::default().model();
    let grid = TimeGrid::new(1.0, 25).unwrap();
    let basis = RegressionBasis::default();
    let opts = NPlayerOptions::default();

    // With a single player the diagnostic reduces to the own ∫E|Z|²dt,
    // recomputed here directly from the stored ensemble.
    let solo = solve_nplayer_particle(&model, 1, &grid, 400, 9, &basis, &opts).unwrap();
    let dt = grid.dt();
    let own: f64 = (0..grid.steps())
        .map(|k| {
            let col = solo.z_diag.slice(ndarray::s![.., k, 0]);
            col.iter().map(|z| z * z).sum::<f64>() / solo.n_scenarios as f64 * dt
        })
        .sum();
    let solo_zsum = zsum_diagnostic(&model, &solo, 3).unwrap();
    assert!(own > 0.0, "coupled model has nonzero Z");
    assert!(
        (solo_zsum - own).abs() <= 1e-12 * own.max(1.0),
        "single-player diagnostic {solo_zsum} should equal the own integral {own}"
    );

    let small = solve_nplayer_particle(&model, 4, &grid, 1_500, 9, &basis, &opts).unwrap();
    let large = solve_nplayer_particle(&model, 16, &grid, 1_500, 9, &basis, &opts).unwrap();
    let z4 = zsum_diagnostic(&model, &small, 3).unwrap();
    let z16 = zsum_diagnostic(&model, &large, 3).unwrap();
    assert!(z4.is_finite() && z4 > 0.0, "z4 = {z4}");
    assert!(z16.is_finite() && z16 > 0.0, "z16 = {z16}");
    assert!(
        z16 < z4,
        "off-diagonal sensitivity should shrink with N: z4 = {z4}, z16 = {z16}"
    );

    // Deterministic in both seeds.
    let again = zsum_diagnostic(&model, &small, 3).unwrap();
    assert_eq!(z4.to_bits(), again.to_bits());
}

#[test]
fn solver_rejects_bad_configurations() {
    let model = OracleParams::default().model();
    let grid = TimeGrid::new(1.0, 5).unwrap();
    let basis = RegressionBasis::default();

    // Models without a closed-form per-player response are rejected up front.
    let hidden = HideClosedForms(OracleParams::default().model());
    assert!(solve_nplayer_particle(
        &hidden,
        2,
        &grid,
        50,
        1,
        &basis,
        &NPlayerOptions::default()
    )
    .is_err());

    // Mismatched per-player initial states.
    assert!(solve_nplayer_particle(
        &model,
        3,
        &grid,
        50,
        1,
        &basis,
        &NPlayerOptions {
            x0_per_player: Some(vec![0.0; 2]),
            ..NPlayerOptions::default()
        }
    )
    .is_err());

    // Stream identifiers must fit the 32-bit lane.
    assert!(solve_nplayer_particle(
        &model,
        2,
        &grid,
        50,
        1,
        &basis,
        &NPlayerOptions {
            stream_ids: Some(vec![0, 1 << 32]),
            ..NPlayerOptions::default()
        }
    )
    .is_err());

    // Zero players or scenarios.
    assert!(
        solve_nplayer_particle(&model, 0, &grid, 50, 1, &basis, &NPlayerOptions::default())
            .is_err()
    );
    assert!(
        solve_nplayer_particle(&model, 2, &grid, 0, 1, &basis, &NPlayerOptions::default())
            .is_err()
    );
}
