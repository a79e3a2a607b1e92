//! `converge`: the full convergence study.
//!
//! Solves the mean-field game once as the reference, then for every `N` in
//! the sweep solves the `N`-player particle system on a shared total
//! particle budget and tabulates
//!
//! * `value_gap_sq` — squared gap between the `N`-player value and the
//!   mean-field value,
//! * `control_w2_int` — time integral of the squared Wasserstein distance
//!   between the pooled `N`-player action law and the limiting action law,
//! * `gamma_n` — the empirical control-law convergence estimate from fresh
//!   equilibrium tuples,
//!
//! together with the theory column `rate_bound(N, m, q) + 1/N + N·R_N²`,
//! where `R_N = coupling/N` with the model's interaction strength. Slope
//! fits land in `fits.csv`, the per-`N` cross-sensitivity in `zsum.csv`.

use std::path::Path;

use mfglab::{
    derive_seed, fit_loglog_slope, gamma_n_estimate, rate_bound, simulate_equilibrium,
    solve_generalized_mkv, solve_nplayer_particle, wasserstein2_1d, zsum_diagnostic, RateRow,
    RateTable, SlopeFit,
};
use ndarray::Array3;

use crate::artifacts::{csv, OutDir};
use crate::commands::{num, solve_nplayer::scenario_count, RunError};
use crate::config::Experiment;

const REF_LABEL: u64 = 0x636f_6e76_5f72_6566;
const NPL_LABEL: u64 = 0x636f_6e76_5f6e_706c;
const GAMMA_LABEL: u64 = 0x636f_6e76_5f67_616d;
const ZSUM_LABEL: u64 = 0x636f_6e76_5f7a_736d;

/// Scenario blocks for the jackknife-style spread of the transport
/// integral. The full-sample standard error is the block spread divided by
/// the block count (variance scales inversely with the sample size).
const W2_BLOCKS: usize = 4;

/// Time integral of the squared transport distance between the pooled
/// `(scenario, player)` action cloud and the reference action cloud, step
/// by step (actions are piecewise constant on the grid).
fn control_w2_integral(
    controls: &Array3<f64>,
    scenario_range: std::ops::Range<usize>,
    ref_actions: &Array3<f64>,
    dt: f64,
) -> Result<f64, RunError> {
    let (_, k_steps, n_players) = controls.dim();
    let m_ref = ref_actions.dim().0;
    let mut total = 0.0;
    for k in 0..k_steps {
        let pooled: Vec<f64> = scenario_range
            .clone()
            .flat_map(|s| (0..n_players).map(move |i| controls[[s, k, i]]))
            .collect();
        let reference: Vec<f64> = (0..m_ref).map(|p| ref_actions[[p, k, 0]]).collect();
        let w = wasserstein2_1d(&pooled, None, &reference, None).map_err(RunError::Solver)?;
        total += w * w * dt;
    }
    Ok(total)
}

/// Fit every quantity present in the table, in first-appearance order.
/// Degenerate series (fewer than two positive estimates) are skipped with a
/// warning — they carry no rate information.
pub fn fit_all(table: &RateTable) -> Vec<(String, SlopeFit)> {
    let mut order: Vec<String> = Vec::new();
    for row in &table.rows {
        if !order.contains(&row.quantity) {
            order.push(row.quantity.clone());
        }
    }
    let mut fits = Vec::new();
    for quantity in order {
        let (ns, es) = table.series(&quantity);
        match fit_loglog_slope(&ns, &es) {
            Ok(fit) => fits.push((quantity, fit)),
            Err(_) => {
                eprintln!("warning: slope fit skipped for {quantity}: degenerate estimates");
            }
        }
    }
    fits
}

pub fn fits_csv(fits: &[(String, SlopeFit)]) -> String {
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|(q, f)| {
            vec![
                q.clone(),
                num(f.slope),
                num(f.intercept),
                num(f.r2),
                f.n_points.to_string(),
            ]
        })
        .collect();
    csv("quantity,slope,intercept,r2,n_points", &rows)
}

pub fn run(exp: &Experiment, out_flag: Option<&Path>) -> Result<(), RunError> {
    let model = exp.model()?;
    let grid = exp.grid()?;
    let basis = exp.basis();
    let sweep = exp.sweep()?;
    let budget = exp.config.numerics.n_paths;
    let q_moment = sweep.q_moment.unwrap_or(3.0);
    let n_rep = sweep.n_rep.unwrap_or(8);
    let coupling = exp.coupling_strength();
    let state_dim = exp.config.model.x0.len();
    let model_tag = exp.config.model.tag.clone();
    let out = OutDir::create(&exp.out_dir(out_flag))?;

    // Reference equilibrium on the full budget.
    let mfg = solve_generalized_mkv(
        model.as_ref(),
        &grid,
        budget,
        exp.seed,
        &basis,
        &exp.mfg_options(),
    )?;
    println!(
        "reference value {:.6} ± {:.6} ({} Picard sweeps)",
        mfg.y0.value,
        mfg.y0.se,
        mfg.report.n_iterations()
    );
    // Limiting action law, sampled fresh under the fitted feedback.
    let (_, ref_actions) = simulate_equilibrium(
        model.as_ref(),
        &mfg,
        budget,
        derive_seed(exp.seed, REF_LABEL),
    )?;

    let mut table = RateTable::default();
    let mut zsum_rows: Vec<Vec<String>> = Vec::new();
    let mut status = String::from("complete");
    let mut failure: Option<RunError> = None;

    for &n in &sweep.n_values {
        let scenarios = scenario_count(budget, n);
        let seed_n = derive_seed(derive_seed(exp.seed, NPL_LABEL), n as u64);
        let theory = rate_bound(n, state_dim, q_moment).map_err(RunError::Solver)?
            + 1.0 / n as f64
            + (coupling * coupling) / n as f64;

        let solution = match solve_nplayer_particle(
            model.as_ref(),
            n,
            &grid,
            scenarios,
            seed_n,
            &basis,
            &exp.nplayer_options(),
        ) {
            Ok(s) => s,
            Err(e) => {
                status = format!("partial: {e}");
                failure = Some(e.into());
                break;
            }
        };

        // Value gap, squared; the spread combines both solvers' errors.
        let gap = solution.y0.value - mfg.y0.value;
        let gap_se = (solution.y0.se.powi(2) + mfg.y0.se.powi(2)).sqrt();
        table.push(RateRow {
            n,
            estimate: gap * gap,
            se: 2.0 * gap.abs() * gap_se + gap_se * gap_se,
            theory_bound: theory,
            quantity: "value_gap_sq".into(),
            model: model_tag.clone(),
            seed: exp.seed,
        });

        // Transport integral of the pooled action law against the limit.
        let full =
            control_w2_integral(&solution.controls, 0..scenarios, &ref_actions, grid.dt())?;
        let block = scenarios / W2_BLOCKS;
        let mut block_vals = Vec::with_capacity(W2_BLOCKS);
        for b in 0..W2_BLOCKS {
            let lo = b * block;
            let hi = if b + 1 == W2_BLOCKS { scenarios } else { lo + block };
            block_vals.push(control_w2_integral(
                &solution.controls,
                lo..hi,
                &ref_actions,
                grid.dt(),
            )?);
        }
        let bmean = block_vals.iter().sum::<f64>() / W2_BLOCKS as f64;
        let bvar = block_vals
            .iter()
            .map(|v| (v - bmean).powi(2))
            .sum::<f64>()
            / (W2_BLOCKS - 1) as f64;
        table.push(RateRow {
            n,
            estimate: full,
            se: bvar.sqrt() / W2_BLOCKS as f64,
            theory_bound: theory,
            quantity: "control_w2_int".into(),
            model: model_tag.clone(),
            seed: exp.seed,
        });

        // Empirical control-law convergence from fresh equilibrium tuples.
        let gamma = gamma_n_estimate(
            model.as_ref(),
            &mfg,
            n,
            n_rep,
            (10 * n).max(2_000),
            derive_seed(derive_seed(exp.seed, GAMMA_LABEL), n as u64),
        )
        .map_err(RunError::Solver)?;
        table.push(RateRow {
            n,
            estimate: gamma.value,
            se: gamma.se,
            theory_bound: theory,
            quantity: "gamma_n".into(),
            model: model_tag.clone(),
            seed: exp.seed,
        });

        let zsum = zsum_diagnostic(
            model.as_ref(),
            &solution,
            derive_seed(exp.seed, ZSUM_LABEL),
        )
        .map_err(RunError::Solver)?;
        zsum_rows.push(vec![
            n.to_string(),
            num(zsum),
            model_tag.clone(),
            exp.seed.to_string(),
        ]);

        println!(
            "N = {n}: gap² {:.3e}, ∫W₂² {:.3e}, γ {:.3e} (theory {:.3e})",
            gap * gap,
            full,
            gamma.value,
            theory
        );
    }

    out.write("rates.csv", table.to_csv())?;
    out.write("zsum.csv", csv("N,zsum,model,seed", &zsum_rows))?;
    let fits = fit_all(&table);
    out.write("fits.csv", fits_csv(&fits))?;
    for (quantity, fit) in &fits {
        println!(
            "{quantity}: slope {:.3}, r² {:.3} over {} points",
            fit.slope, fit.r2, fit.n_points
        );
    }
    out.write_manifest(
        "converge",
        exp,
        &status,
        &[
            ("reference_y0".into(), num(mfg.y0.value)),
            ("reference_y0_se".into(), num(mfg.y0.se)),
            ("budget".into(), budget.to_string()),
            ("q_moment".into(), num(q_moment)),
        ],
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
