//! `solve-mfg`: Picard iteration to the mean-field equilibrium, with the
//! convergence history and a value summary as artifacts.

use std::io::BufWriter;
use std::path::Path;

use mfglab::{solve_generalized_mkv, write_mfgb, Error, PicardReport};

use crate::artifacts::{csv, OutDir};
use crate::commands::{num, RunError};
use crate::config::Experiment;

fn picard_csv(report: &PicardReport) -> String {
    let rows: Vec<Vec<String>> = report
        .iterations
        .iter()
        .enumerate()
        .map(|(i, it)| {
            vec![
                (i + 1).to_string(),
                num(it.distance_z),
                num(it.distance_xi),
                it.contraction_factor.map(num).unwrap_or_default(),
                it.damped.to_string(),
            ]
        })
        .collect();
    csv("iteration,distance_z,distance_xi,contraction_factor,damped", &rows)
}

pub fn run(exp: &Experiment, out_flag: Option<&Path>) -> Result<(), RunError> {
    let model = exp.model()?;
    let grid = exp.grid()?;
    let basis = exp.basis();
    let opts = exp.mfg_options();
    let out = OutDir::create(&exp.out_dir(out_flag))?;

    let solution = match solve_generalized_mkv(
        model.as_ref(),
        &grid,
        exp.config.numerics.n_paths,
        exp.seed,
        &basis,
        &opts,
    ) {
        Ok(s) => s,
        Err(e) => {
            // Flag the aborted run but keep the iteration history around —
            // it is the evidence one needs to retune the configuration.
            if let Error::NoConvergence {
                report: Some(report),
                ..
            } = &e
            {
                out.write("picard.csv", picard_csv(report))?;
            }
            out.write_manifest("solve-mfg", exp, &format!("failed: {e}"), &[])?;
            return Err(e.into());
        }
    };

    out.write("picard.csv", picard_csv(&solution.report))?;
    let residual = solution.bsde.max_martingale_residual();
    let summary = csv(
        "y0,se,iterations,converged,beta,max_martingale_residual,clip_count",
        &[vec![
            num(solution.y0.value),
            num(solution.y0.se),
            solution.report.n_iterations().to_string(),
            solution.report.converged.to_string(),
            num(solution.report.beta),
            num(residual),
            solution.weights.clip_count().to_string(),
        ]],
    );
    out.write("mfg_summary.csv", summary)?;
    if exp.emit_paths() {
        let file = std::fs::File::create(out.path("paths.mfgb"))?;
        let mut writer = BufWriter::new(file);
        write_mfgb(&solution.paths, &mut writer)?;
    }
    for warning in &solution.report.warnings {
        eprintln!("warning: {warning}");
    }
    out.write_manifest(
        "solve-mfg",
        exp,
        "complete",
        &[
            ("y0".into(), num(solution.y0.value)),
            ("y0_se".into(), num(solution.y0.se)),
            (
                "iterations".into(),
                solution.report.n_iterations().to_string(),
            ),
        ],
    )?;
    println!(
        "equilibrium value {:.6} ± {:.6} after {} Picard sweeps",
        solution.y0.value,
        solution.y0.se,
        solution.report.n_iterations()
    );
    Ok(())
}
