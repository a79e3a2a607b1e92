//! `solve-nplayer`: one particle-system solve per sweep entry.
//!
//! `numerics.n_paths` is a total particle budget: each game with `N`
//! players runs `max(n_paths / N, 256)` scenarios, so every sweep entry
//! spends comparable work and Monte-Carlo error.

use std::path::Path;

use mfglab::{derive_seed, solve_nplayer_particle, zsum_diagnostic};

use crate::artifacts::{csv, OutDir};
use crate::commands::{num, RunError};
use crate::config::Experiment;

const NPLAYER_LABEL: u64 = 0x6e70_6c61_7965_7273;
const ZSUM_LABEL: u64 = 0x7a73_756d_5f63_6c69;

pub fn scenario_count(budget: usize, n_players: usize) -> usize {
    (budget / n_players).max(256)
}

pub fn run(exp: &Experiment, out_flag: Option<&Path>) -> Result<(), RunError> {
    let model = exp.model()?;
    let grid = exp.grid()?;
    let basis = exp.basis();
    let opts = exp.nplayer_options();
    let sweep = exp.sweep()?;
    let budget = exp.config.numerics.n_paths;
    let out = OutDir::create(&exp.out_dir(out_flag))?;

    let mut value_rows: Vec<Vec<String>> = Vec::new();
    let mut history_rows: Vec<Vec<String>> = Vec::new();
    let mut status = String::from("complete");
    let mut failure: Option<RunError> = None;

    for &n in &sweep.n_values {
        let scenarios = scenario_count(budget, n);
        let seed_n = derive_seed(derive_seed(exp.seed, NPLAYER_LABEL), n as u64);
        let solution = match solve_nplayer_particle(
            model.as_ref(),
            n,
            &grid,
            scenarios,
            seed_n,
            &basis,
            &opts,
        ) {
            Ok(s) => s,
            Err(e) => {
                status = format!("partial: {e}");
                failure = Some(e.into());
                break;
            }
        };
        let zsum = zsum_diagnostic(
            model.as_ref(),
            &solution,
            derive_seed(exp.seed, ZSUM_LABEL),
        )?;
        let spread = solution
            .y0_per_player
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            - solution
                .y0_per_player
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
        value_rows.push(vec![
            n.to_string(),
            scenarios.to_string(),
            num(solution.y0.value),
            num(solution.y0.se),
            num(spread),
            solution.fp_history.len().to_string(),
            num(zsum),
        ]);
        for (i, d) in solution.fp_history.iter().enumerate() {
            history_rows.push(vec![n.to_string(), (i + 1).to_string(), num(*d)]);
        }
        println!(
            "N = {n}: value {:.6} ± {:.6} over {scenarios} scenarios ({} sweeps)",
            solution.y0.value,
            solution.y0.se,
            solution.fp_history.len()
        );
    }

    out.write(
        "nplayer_values.csv",
        csv(
            "N,scenarios,y0,se,y0_spread,iterations,zsum",
            &value_rows,
        ),
    )?;
    out.write(
        "fp_history.csv",
        csv("N,iteration,distance", &history_rows),
    )?;
    out.write_manifest("solve-nplayer", exp, &status, &[])?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
