//! Regression Monte-Carlo solver for discretized BSDEs under the base measure.
//!
//! Backward scheme on the shared grid, one global regression per step:
//!
//! * `Y_{t_K}` is the supplied terminal array (kept bitwise);
//! * `C_k = Ê[Y_{t_{k+1}} | basis(t_k)]` via ridge least squares;
//! * `Z_{t_k} = Ê[(Y_{t_{k+1}} − C_k)·ΔW_k | basis(t_k)] / Δt` — regressing the
//!   *martingale residual* instead of `Y·ΔW` keeps the estimator conditionally
//!   unbiased while zeroing `Z` exactly whenever `Y_{t_{k+1}}` is perfectly
//!   explained by the basis (constants, deterministic drivers);
//! * `Y_{t_k} = C_k + generator(k, ·, Z_{t_k})·Δt` (explicit in the generator).
//!
//! All reductions use the fixed-topology helpers from [`crate::linalg`], so a
//! solve is bit-identical across thread counts.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{fitted_values, mean, pairwise_sum, ridge_fit_multi, standard_error};
use crate::measure::MeasureFlow;
use crate::paths::PathEnsemble;

/// Polynomial-plus-interaction regression basis.
///
/// Features per path at node `k`, in column order: intercept; own-state
/// powers `x_c, x_c², …, x_c^degree` per component; optionally the lagged
/// own state per component; optionally the mean and second moment of the
/// measure-flow state cloud (per-step constants in a mean-field solve, but
/// genuine regressors when a caller supplies per-path clouds).
#[derive(Debug, Clone)]
pub struct RegressionBasis {
    pub degree: usize,
    pub empirical_moments: bool,
    pub lagged_state: bool,
    pub lag: f64,
    /// Ridge strength; `None` selects the default `1e-8 · (#samples)`.
    pub ridge: Option<f64>,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 3,
            empirical_moments: true,
            lagged_state: false,
            lag: 0.0,
            ridge: None,
        }
    }
}

impl RegressionBasis {
    pub fn n_features(&self, state_dim: usize) -> usize {
        1 + self.degree * state_dim
            + if self.lagged_state { state_dim } else { 0 }
            + if self.empirical_moments { 2 } else { 0 }
    }

    /// Ridge parameter for a given sample count.
    pub fn ridge_for(&self, n_samples: usize) -> f64 {
        self.ridge.unwrap_or(1e-8 * n_samples as f64)
    }

    /// Fill the feature row for one path prefix. `cloud_moments` carries the
    /// measure-flow `(mean, second moment)` pair when enabled.
    pub fn feature_row(
        &self,
        slice: &crate::paths::PathSlice<'_>,
        state_dim: usize,
        cloud_moments: Option<(f64, f64)>,
        out: &mut [f64],
    ) {
        let mut idx = 0;
        out[idx] = 1.0;
        idx += 1;
        for c in 0..state_dim {
            let x = slice.state(c);
            let mut pow = 1.0;
            for _ in 0..self.degree {
                pow *= x;
                out[idx] = pow;
                idx += 1;
            }
        }
        if self.lagged_state {
            for c in 0..state_dim {
                out[idx] = slice.lagged_state(self.lag, c);
                idx += 1;
            }
        }
        if self.empirical_moments {
            let (m1, m2) = cloud_moments.unwrap_or((0.0, 0.0));
            out[idx] = m1;
            out[idx + 1] = m2;
        }
    }

    /// Design matrix over all paths at node `k`.
    pub fn build_design(
        &self,
        paths: &PathEnsemble,
        flow: Option<&MeasureFlow>,
        k: usize,
    ) -> Array2<f64> {
        let m_paths = paths.n_paths();
        let state_dim = paths.state_dim();
        let b = self.n_features(state_dim);
        let cloud_moments = if self.empirical_moments {
            flow.map(|f| {
                let view = f.slice(k).view();
                let m1 = view.mean_feature_fn(0..state_dim, |x| x);
                let m2 = view.mean_feature_fn(0..state_dim, |x| x * x);
                (m1, m2)
            })
        } else {
            None
        };
        let rows: Vec<Vec<f64>> = (0..m_paths)
            .into_par_iter()
            .map(|p| {
                let mut row = vec![0.0; b];
                let slice = paths.slice(p, k);
                self.feature_row(&slice, state_dim, cloud_moments, &mut row);
                row
            })
            .collect();
        let mut design = Array2::zeros((m_paths, b));
        for (p, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                design[[p, j]] = v;
            }
        }
        design
    }
}

/// Output of a regression Monte-Carlo BSDE solve.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// `Y` field, shape `(M, K+1)`; row `K` is the terminal array bitwise.
    pub y: Array2<f64>,
    /// `Z` field, shape `(M, K, d)`.
    pub z: Array3<f64>,
    /// `mean(Y[·, 0])`.
    pub y0: f64,
    /// Monte-Carlo standard error of `y0`, from the dispersion of the
    /// step-0 regression targets.
    pub y0_se: f64,
    /// Per-step `R²` of the continuation-value regression.
    pub r2: Vec<f64>,
    /// Per-step martingale residual `|mean(Y_{k+1} − C_k − Z_k·ΔW_k)|`.
    pub step_residuals: Vec<f64>,
    /// Per-step, per-noise-dimension regression coefficients of the `Z`
    /// field: the fitted feedback map, reusable to evaluate `Z` on fresh
    /// states.
    pub z_coeffs: Vec<Vec<Vec<f64>>>,
}

impl BsdeSolution {
    /// Worst per-step martingale residual, normalized by `1 + |Y_0|`.
    pub fn max_martingale_residual(&self) -> f64 {
        let denom = 1.0 + self.y0.abs();
        self.step_residuals
            .iter()
            .fold(0.0_f64, |acc, r| acc.max(r.abs()))
            / denom
    }
}

/// Solve the discretized BSDE with the given terminal array and generator.
///
/// `generator(k, p, z)` must return the driver at node `k` for path `p` and
/// the freshly regressed `z = Z_{t_k}(path p)`; it is expected to be Lipschitz
/// in `z` at the discrete level (clamp quadratic drivers before calling).
/// `flow` feeds the optional empirical-moment features of the basis.
pub fn solve_bsde_regression<G>(
    paths: &PathEnsemble,
    terminal: &[f64],
    generator: G,
    basis: &RegressionBasis,
    flow: Option<&MeasureFlow>,
) -> Result<BsdeSolution>
where
    G: Fn(usize, usize, &[f64]) -> f64 + Sync,
{
    let m_paths = paths.n_paths();
    let k_steps = paths.grid().steps();
    let d = paths.noise_dim();
    let dt = paths.grid().dt();
    if terminal.len() != m_paths {
        return Err(Error::DimensionMismatch {
            context: "solve_bsde_regression",
            expected: format!("terminal of length {m_paths}"),
            got: format!("{}", terminal.len()),
        });
    }
    for (p, &g) in terminal.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: "solve_bsde_regression terminal",
                path: Some(p),
                step: None,
            });
        }
    }

    let mut y = Array2::zeros((m_paths, k_steps + 1));
    let mut z = Array3::zeros((m_paths, k_steps, d));
    for (p, &g) in terminal.iter().enumerate() {
        y[[p, k_steps]] = g;
    }
    let mut r2 = vec![0.0; k_steps];
    let mut step_residuals = vec![0.0; k_steps];
    let mut z_coeffs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k_steps];
    let lambda = basis.ridge_for(m_paths);
    let mut y0_se = 0.0;

    for k in (0..k_steps).rev() {
        let design = basis.build_design(paths, flow, k);
        let y_next: Vec<f64> = (0..m_paths).map(|p| y[[p, k + 1]]).collect();

        // Continuation value.
        let beta_y = ridge_fit_multi(design.view(), &[&y_next], lambda, k)?;
        let cont = fitted_values(design.view(), &beta_y[0]);

        // Martingale residual and Z targets.
        let resid: Vec<f64> = (0..m_paths).map(|p| y_next[p] - cont[p]).collect();
        let z_targets: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..m_paths)
                    .map(|p| resid[p] * paths.increments()[[p, k, j]] / dt)
                    .collect()
            })
            .collect();
        let z_target_refs: Vec<&[f64]> = z_targets.iter().map(|t| t.as_slice()).collect();
        let beta_z = ridge_fit_multi(design.view(), &z_target_refs, lambda, k)?;
        for (j, beta) in beta_z.iter().enumerate() {
            let fit = fitted_values(design.view(), beta);
            for p in 0..m_paths {
                z[[p, k, j]] = fit[p];
            }
        }
        z_coeffs[k] = beta_z;

        // Generator evaluation at the fresh Z.
        let gen_vals: Vec<f64> = (0..m_paths)
            .into_par_iter()
            .map(|p| {
                let z_row: Vec<f64> = (0..d).map(|j| z[[p, k, j]]).collect();
                generator(k, p, &z_row)
            })
            .collect();
        for (p, &gv) in gen_vals.iter().enumerate() {
            if !gv.is_finite() {
                return Err(Error::NonFinite {
                    context: "solve_bsde_regression generator",
                    path: Some(p),
                    step: Some(k),
                });
            }
            y[[p, k]] = cont[p] + gv * dt;
        }

        // Diagnostics.
        let ss_res = pairwise_sum(&resid.iter().map(|r| r * r).collect::<Vec<_>>());
        let y_mean = mean(&y_next);
        let ss_tot = pairwise_sum(
            &y_next
                .iter()
                .map(|v| (v - y_mean) * (v - y_mean))
                .collect::<Vec<_>>(),
        );
        r2[k] = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        let mart: Vec<f64> = (0..m_paths)
            .map(|p| {
                let mut zdw = 0.0;
                for j in 0..d {
                    zdw += z[[p, k, j]] * paths.increments()[[p, k, j]];
                }
                resid[p] - zdw
            })
            .collect();
        step_residuals[k] = mean(&mart).abs();

        if k == 0 {
            // Dispersion of the raw step-0 targets (projection at t_0 is a
            // plain mean when X_0 is deterministic, so this is the honest
            // Monte-Carlo error of y0).
            let raw0: Vec<f64> = (0..m_paths)
                .map(|p| y_next[p] + gen_vals[p] * dt)
                .collect();
            y0_se = standard_error(&raw0);
        }
    }

    let y_first: Vec<f64> = (0..m_paths).map(|p| y[[p, 0]]).collect();
    let y0 = mean(&y_first);
    Ok(BsdeSolution {
        y,
        z,
        y0,
        y0_se,
        r2,
        step_residuals,
        z_coeffs,
    })
}

/// Recompute the worst normalized martingale residual of a solution under a
/// (possibly different) generator: `max_k |mean(Y_{k+1} − Y_k + gen·Δt −
/// Z_k·ΔW_k)| / (1 + |Y_0|)`.
pub fn martingale_residual_check<G>(
    solution: &BsdeSolution,
    paths: &PathEnsemble,
    generator: G,
) -> f64
where
    G: Fn(usize, usize, &[f64]) -> f64 + Sync,
{
    let m_paths = paths.n_paths();
    let k_steps = paths.grid().steps();
    let d = paths.noise_dim();
    let dt = paths.grid().dt();
    let mut worst = 0.0_f64;
    for k in 0..k_steps {
        let residuals: Vec<f64> = (0..m_paths)
            .into_par_iter()
            .map(|p| {
                let z_row: Vec<f64> = (0..d).map(|j| solution.z[[p, k, j]]).collect();
                let mut zdw = 0.0;
                for j in 0..d {
                    zdw += z_row[j] * paths.increments()[[p, k, j]];
                }
                solution.y[[p, k + 1]] - solution.y[[p, k]] + generator(k, p, &z_row) * dt - zdw
            })
            .collect();
        worst = worst.max(mean(&residuals).abs());
    }
    worst / (1.0 + solution.y0.abs())
}
