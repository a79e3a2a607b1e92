//! `rates`: refit log-log convergence slopes from an existing `rates.csv`
//! (as written by `converge`) without re-running any solver.

use std::path::Path;

use mfglab::{RateRow, RateTable};

use crate::artifacts::OutDir;
use crate::commands::converge::{fit_all, fits_csv};
use crate::commands::RunError;
use crate::config::Experiment;

const HEADER: &str = "N,estimate,se,theory_bound,quantity,model,seed";

fn parse_rates(text: &str) -> Result<RateTable, RunError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(RunError::Config(format!(
                "rates.csv header mismatch: expected `{HEADER}`, got `{}`",
                other.unwrap_or("<empty file>")
            )))
        }
    }
    let mut table = RateTable::default();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(RunError::Config(format!(
                "rates.csv row {}: expected 7 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let bad = |field: &str, what: &str| {
            RunError::Config(format!("rates.csv row {}: bad {what} `{field}`", idx + 2))
        };
        table.push(RateRow {
            n: fields[0].parse().map_err(|_| bad(fields[0], "N"))?,
            estimate: fields[1].parse().map_err(|_| bad(fields[1], "estimate"))?,
            se: fields[2].parse().map_err(|_| bad(fields[2], "se"))?,
            theory_bound: fields[3]
                .parse()
                .map_err(|_| bad(fields[3], "theory_bound"))?,
            quantity: fields[4].to_string(),
            model: fields[5].to_string(),
            seed: fields[6].parse().map_err(|_| bad(fields[6], "seed"))?,
        });
    }
    Ok(table)
}

pub fn run(exp: &Experiment, out_flag: Option<&Path>) -> Result<(), RunError> {
    let dir = exp.out_dir(out_flag);
    let rates_path = dir.join("rates.csv");
    let text = std::fs::read_to_string(&rates_path).map_err(|e| {
        RunError::Config(format!("cannot read {}: {e}", rates_path.display()))
    })?;
    let table = parse_rates(&text)?;
    if table.rows.is_empty() {
        return Err(RunError::Config("rates.csv holds no rows".into()));
    }
    let fits = fit_all(&table);
    let out = OutDir::create(&dir)?;
    out.write("fits.csv", fits_csv(&fits))?;
    for (quantity, fit) in &fits {
        println!(
            "{quantity}: slope {:.3}, intercept {:.3}, r² {:.3} over {} points",
            fit.slope, fit.intercept, fit.r2, fit.n_points
        );
    }
    Ok(())
}
