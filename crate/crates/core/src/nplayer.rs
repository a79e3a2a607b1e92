//! N-player particle solver: coupled forward simulation under candidate
//! controls, pooled-regression BSDE values, and damped best-response updates.
//!
//! The game is solved on `S` independent scenarios of `N` interacting
//! particles. Per outer iteration: (1) particles are re-simulated under the
//! current control field (drift `σ·b`, Brownian increments drawn once and
//! pinned across iterations); (2) player values `Y^i` are regressed backward
//! on pooled `(scenario, player)` samples with exchangeability-respecting
//! features (own state powers, interaction statistics of the scenario
//! cloud), giving the diagonal `Z^{ii}` off the own-increment martingale
//! residual; (3) every action is replaced by the model's closed-form
//! `N`-player best response at `(state, Z^{ii})`, with optional damping.
//! With pinned increments the iteration map is deterministic, so a
//! contraction reaches machine-precision fixed points.
//!
//! Scope: scalar models (`m = d = q = 1`). The built-in games all provide
//! closed-form best responses; models without one are rejected rather than
//! silently approximated, because the own-action measure feedback the
//! closed form carries is exactly the `O(1/N)` effect under study.

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

use crate::bsde::RegressionBasis;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{fitted_values, mean, ridge_fit_multi, sample_std};
use crate::measure::{FeatureLayout, MeasureView};
use crate::model::GameModel;
use crate::paths::{Estimate, PathSlice};
use crate::rng::{derive_seed, PathStream};

/// Options for [`solve_nplayer_particle`].
#[derive(Debug, Clone)]
pub struct NPlayerOptions {
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Damping weight on the best-response update once the contraction
    /// factor exceeds 0.9.
    pub damping: f64,
    pub z_clip: f64,
    /// Per-player initial states overriding the model's `X_0` (length `N`).
    pub x0_per_player: Option<Vec<f64>>,
    /// Per-player noise stream identifiers (length `N`, each `< 2³²`);
    /// defaults to `0..N`. Permuting these together with the initial states
    /// permutes the solution (exchangeability).
    pub stream_ids: Option<Vec<u64>>,
}

impl Default for NPlayerOptions {
    fn default() -> Self {
        NPlayerOptions {
            tol_fp: 1e-8,
            max_iter: 60,
            damping: 0.5,
            z_clip: 10.0,
            x0_per_player: None,
            stream_ids: None,
        }
    }
}

/// Converged N-player solution.
#[derive(Debug, Clone)]
pub struct NPlayerSolution {
    pub n_players: usize,
    pub n_scenarios: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    /// Particle states, shape `(S, K+1, N)`.
    pub states: Array3<f64>,
    /// Brownian increments, shape `(S, K, N)` (pinned across iterations).
    pub increments: Array3<f64>,
    /// Equilibrium controls, shape `(S, K, N)`.
    pub controls: Array3<f64>,
    /// Player values under the equilibrium measure, shape `(S, K+1, N)`.
    pub y: Array3<f64>,
    /// Diagonal `Z^{ii}`, shape `(S, K, N)`.
    pub z_diag: Array3<f64>,
    /// Grand-mean initial value with its scenario-level standard error.
    pub y0: Estimate,
    /// Per-player initial values (spread diagnoses symmetry).
    pub y0_per_player: Vec<f64>,
    /// Sup-norm control change per outer iteration.
    pub fp_history: Vec<f64>,
    pub basis: RegressionBasis,
}

impl NPlayerSolution {
    /// Largest deviation of a per-player initial value from the grand mean.
    pub fn y0_spread(&self) -> f64 {
        self.y0_per_player
            .iter()
            .fold(0.0_f64, |acc, v| acc.max((v - self.y0.value).abs()))
    }
}

fn feature_count(basis: &RegressionBasis, n_stats: usize) -> usize {
    1 + basis.degree + if basis.lagged_state { 1 } else { 0 } + n_stats
}

/// Interaction statistics of scenario `s` at node `k` (actions taken at
/// `min(k, K−1)`, matching the predictable-control convention).
fn scenario_stats(
    model: &dyn GameModel,
    states: &Array3<f64>,
    controls: &Array3<f64>,
    grid: &TimeGrid,
    s: usize,
    k: usize,
    out: &mut [f64],
) -> Result<()> {
    let n = states.shape()[2];
    let layout = model.feature_layout();
    let fd = layout.feature_dim(1);
    let k_steps = grid.steps();
    let ka = k.min(k_steps - 1);
    let mut feats = Array2::zeros((n, fd));
    let mut actions = Array2::zeros((n, 1));
    for i in 0..n {
        let col = states.slice(s![s, .., i..i + 1]);
        let slice = PathSlice::new(col, k, grid);
        feats[[i, 0]] = slice.state(0);
        if let FeatureLayout::CurrentAndLagged { lag } = layout {
            feats[[i, 1]] = slice.lagged_state(lag, 0);
        }
        actions[[i, 0]] = controls[[s, ka, i]];
    }
    let view = MeasureView::new(feats.view(), actions.view(), None)?;
    model.interaction_stats(&view, out);
    Ok(())
}

fn fill_feature_row(
    basis: &RegressionBasis,
    slice: &PathSlice<'_>,
    stats: &[f64],
    out: &mut [f64],
) {
    let mut idx = 0;
    out[idx] = 1.0;
    idx += 1;
    let x = slice.state(0);
    let mut pow = 1.0;
    for _ in 0..basis.degree {
        pow *= x;
        out[idx] = pow;
        idx += 1;
    }
    if basis.lagged_state {
        out[idx] = slice.lagged_state(basis.lag, 0);
        idx += 1;
    }
    out[idx..idx + stats.len()].copy_from_slice(stats);
}

/// Forward particle sweep under `controls`: `X_{k+1} = X_k + σ·(b·Δt + ΔW)`.
fn forward_particles(
    model: &dyn GameModel,
    grid: &TimeGrid,
    increments: &Array3<f64>,
    controls: &Array3<f64>,
    x0: &[f64],
) -> Result<Array3<f64>> {
    let (n_scen, k_steps, n) = increments.dim();
    let dt = grid.dt();
    let n_stats = model.n_stats();
    let per_scenario: Vec<Array2<f64>> = (0..n_scen)
        .into_par_iter()
        .map(|s| -> Result<Array2<f64>> {
            let mut states = Array2::zeros((k_steps + 1, n));
            for i in 0..n {
                states[[0, i]] = x0[i];
            }
            let mut stats = vec![0.0; n_stats];
            let mut sigma = [0.0_f64];
            let mut b = [0.0_f64];
            let layout = model.feature_layout();
            let fd = layout.feature_dim(1);
            for k in 0..k_steps {
                // Cloud statistics at this node, from the local buffer.
                let mut feats = Array2::zeros((n, fd));
                let mut acts = Array2::zeros((n, 1));
                for i in 0..n {
                    let col = states.slice(s![.., i..i + 1]);
                    let slice = PathSlice::new(col, k, grid);
                    feats[[i, 0]] = slice.state(0);
                    if let FeatureLayout::CurrentAndLagged { lag } = layout {
                        feats[[i, 1]] = slice.lagged_state(lag, 0);
                    }
                    acts[[i, 0]] = controls[[s, k, i]];
                }
                let view = MeasureView::new(feats.view(), acts.view(), None)?;
                model.interaction_stats(&view, &mut stats);
                for i in 0..n {
                    let col = states.slice(s![.., i..i + 1]);
                    let slice = PathSlice::new(col, k, grid);
                    model.sigma_into(&slice, &mut sigma);
                    model.drift_into(&slice, &stats, &[controls[[s, k, i]]], &mut b);
                    let next =
                        states[[k, i]] + sigma[0] * (b[0] * dt + increments[[s, k, i]]);
                    if !next.is_finite() {
                        return Err(Error::NonFinite {
                            context: "forward_particles",
                            path: Some(s),
                            step: Some(k),
                        });
                    }
                    states[[k + 1, i]] = next;
                }
            }
            Ok(states)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states = Array3::zeros((n_scen, k_steps + 1, n));
    for (s, local) in per_scenario.into_iter().enumerate() {
        states.slice_mut(s![s, .., ..]).assign(&local);
    }
    Ok(states)
}

struct BackwardOutput {
    y: Array3<f64>,
    z_diag: Array3<f64>,
    /// Raw step-0 targets per `(scenario, player)`.
    raw0: Array2<f64>,
}

/// Pooled-regression backward sweep under frozen controls.
fn backward_values(
    model: &dyn GameModel,
    grid: &TimeGrid,
    states: &Array3<f64>,
    increments: &Array3<f64>,
    controls: &Array3<f64>,
    stats_table: &[Vec<f64>],
    basis: &RegressionBasis,
) -> Result<BackwardOutput> {
    let (n_scen, k_steps, n) = increments.dim();
    let dt = grid.dt();
    let n_stats = model.n_stats();
    let n_feat = feature_count(basis, n_stats);
    let n_samples = n_scen * n;
    let lambda = basis.ridge_for(n_samples);

    let mut y = Array3::zeros((n_scen, k_steps + 1, n));
    let mut z_diag = Array3::zeros((n_scen, k_steps, n));
    let mut raw0 = Array2::zeros((n_scen, n));

    // Terminal condition on the empirical terminal cloud.
    for s in 0..n_scen {
        let stats = &stats_table[s * (k_steps + 1) + k_steps];
        for i in 0..n {
            let col = states.slice(s![s, .., i..i + 1]);
            let slice = PathSlice::new(col, k_steps, grid);
            y[[s, k_steps, i]] = model.terminal_reward(&slice, stats);
        }
    }

    for k in (0..k_steps).rev() {
        // Pooled design over (scenario, player) samples.
        let design_rows: Vec<Vec<f64>> = (0..n_samples)
            .into_par_iter()
            .map(|r| {
                let (s, i) = (r / n, r % n);
                let col = states.slice(s![s, .., i..i + 1]);
                let slice = PathSlice::new(col, k, grid);
                let stats = &stats_table[s * (k_steps + 1) + k];
                let mut row = vec![0.0; n_feat];
                fill_feature_row(basis, &slice, stats, &mut row);
                row
            })
            .collect();
        let mut design = Array2::zeros((n_samples, n_feat));
        for (r, row) in design_rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                design[[r, j]] = v;
            }
        }
        let y_next: Vec<f64> = (0..n_samples)
            .map(|r| y[[r / n, k + 1, r % n]])
            .collect();
        // With a single player there is no cross-section: the interaction
        // stats collapse to functions of the row's own state and action, so
        // the continuation fit also restricts to the state columns.
        let cont_cols = if n > 1 { n_feat } else { n_feat - n_stats };
        let design_cont = design.slice(s![.., ..cont_cols]);
        let beta_y = ridge_fit_multi(design_cont, &[&y_next], lambda, k)?;
        let cont = fitted_values(design_cont, &beta_y[0]);

        let z_target: Vec<f64> = (0..n_samples)
            .map(|r| {
                let (s, i) = (r / n, r % n);
                (y_next[r] - cont[r]) * increments[[s, k, i]] / dt
            })
            .collect();
        // The martingale loading is a state feedback, so it is extracted on
        // the state columns only.  The interaction columns stay in the
        // continuation fit, where the cross-scenario spread of the empirical
        // means carries value information, but they are excluded here: at
        // early steps that spread is tiny, the columns are nearly collinear
        // with the intercept, and a Z estimate leaning on them feeds each
        // cell's own action back into its best response through the mean —
        // a self-sustaining oscillation that prevents the fixed point from
        // resolving.
        let design_state = design.slice(s![.., ..n_feat - n_stats]);
        let beta_z = ridge_fit_multi(design_state, &[&z_target], lambda, k)?;
        let z_fit = fitted_values(design_state, &beta_z[0]);

        for r in 0..n_samples {
            let (s, i) = (r / n, r % n);
            z_diag[[s, k, i]] = z_fit[r];
            let col = states.slice(s![s, .., i..i + 1]);
            let slice = PathSlice::new(col, k, grid);
            let stats = &stats_table[s * (k_steps + 1) + k];
            let f = model.running_reward(&slice, stats, &[controls[[s, k, i]]]);
            if !f.is_finite() {
                return Err(Error::NonFinite {
                    context: "backward_values",
                    path: Some(s),
                    step: Some(k),
                });
            }
            y[[s, k, i]] = cont[r] + f * dt;
            if k == 0 {
                raw0[[s, i]] = y_next[r] + f * dt;
            }
        }
    }
    Ok(BackwardOutput { y, z_diag, raw0 })
}

fn stats_table(
    model: &dyn GameModel,
    grid: &TimeGrid,
    states: &Array3<f64>,
    controls: &Array3<f64>,
) -> Result<Vec<Vec<f64>>> {
    let n_scen = states.shape()[0];
    let k_steps = grid.steps();
    let n_stats = model.n_stats();
    let table: Vec<Vec<f64>> = (0..n_scen * (k_steps + 1))
        .into_par_iter()
        .map(|idx| -> Result<Vec<f64>> {
            let (s, k) = (idx / (k_steps + 1), idx % (k_steps + 1));
            let mut out = vec![0.0; n_stats];
            scenario_stats(model, states, controls, grid, s, k, &mut out)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(table)
}

/// Solve the symmetric `N`-player game by damped best-response iteration.
pub fn solve_nplayer_particle(
    model: &dyn GameModel,
    n_players: usize,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    basis: &RegressionBasis,
    opts: &NPlayerOptions,
) -> Result<NPlayerSolution> {
    let dims = model.dims();
    if dims.state != 1 || dims.noise != 1 || dims.action != 1 {
        return Err(Error::invalid(
            "solve_nplayer_particle supports scalar models (m = d = q = 1) only",
        ));
    }
    if n_players == 0 || n_scenarios == 0 {
        return Err(Error::invalid(
            "solve_nplayer_particle requires n_players >= 1 and n_scenarios >= 1",
        ));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    // Reject models without a closed-form best response up front, before any
    // simulation runs.
    {
        let probe_states = Array2::zeros((grid.nodes(), 1));
        let probe = PathSlice::new(probe_states.view(), 0, grid);
        let stats = vec![0.0; model.n_stats()];
        if model
            .nplayer_best_response(&probe, &stats, &[0.0], n_players)
            .is_none()
        {
            return Err(Error::invalid(
                "solve_nplayer_particle requires a closed-form n-player best response",
            ));
        }
    }
    let x0 = match &opts.x0_per_player {
        Some(v) => {
            if v.len() != n_players {
                return Err(Error::DimensionMismatch {
                    context: "solve_nplayer_particle",
                    expected: format!("{n_players} initial states"),
                    got: format!("{}", v.len()),
                });
            }
            v.clone()
        }
        None => vec![model.initial_state()[0]; n_players],
    };
    let stream_ids: Vec<u64> = match &opts.stream_ids {
        Some(ids) => {
            if ids.len() != n_players {
                return Err(Error::DimensionMismatch {
                    context: "solve_nplayer_particle",
                    expected: format!("{n_players} stream ids"),
                    got: format!("{}", ids.len()),
                });
            }
            for &id in ids {
                if id >= (1 << 32) {
                    return Err(Error::invalid("stream ids must be < 2^32"));
                }
            }
            ids.clone()
        }
        None => (0..n_players as u64).collect(),
    };

    let k_steps = grid.steps();
    let sqrt_dt = grid.dt().sqrt();
    // Brownian increments: one stream per (scenario, player), pinned for the
    // whole solve.
    let mut increments = Array3::zeros((n_scenarios, k_steps, n_players));
    let draws: Vec<Vec<f64>> = (0..n_scenarios * n_players)
        .into_par_iter()
        .map(|idx| {
            let (s, i) = (idx / n_players, idx % n_players);
            let stream_id = ((s as u64) << 32) | stream_ids[i];
            let mut stream = PathStream::new(seed, stream_id);
            (0..k_steps).map(|_| sqrt_dt * stream.next_std_normal()).collect()
        })
        .collect();
    for (idx, draw) in draws.into_iter().enumerate() {
        let (s, i) = (idx / n_players, idx % n_players);
        for (k, v) in draw.into_iter().enumerate() {
            increments[[s, k, i]] = v;
        }
    }

    // Initial control field: the model's reference action.
    let a_ref = model.reference_action()[0];
    let mut controls = Array3::from_elem((n_scenarios, k_steps, n_players), a_ref);
    let mut fp_history = Vec::new();
    let mut prev_dist: Option<f64> = None;
    let mut converged = false;
    // Once the contraction factor degrades the update stays damped: an
    // undamped sweep in a noisy regime re-kicks sign-alternating cells.
    let mut sticky_damp = false;

    for _iter in 0..opts.max_iter {
        let states = forward_particles(model, grid, &increments, &controls, &x0)?;
        let table = stats_table(model, grid, &states, &controls)?;
        let back = backward_values(model, grid, &states, &increments, &controls, &table, basis)?;

        // Best-response sweep at the diagonal Z.
        let proposals: Vec<Vec<f64>> = (0..n_scenarios)
            .into_par_iter()
            .map(|s| -> Result<Vec<f64>> {
                let mut out = vec![0.0; k_steps * n_players];
                for k in 0..k_steps {
                    let stats = &table[s * (k_steps + 1) + k];
                    for i in 0..n_players {
                        let col = states.slice(s![s, .., i..i + 1]);
                        let slice = PathSlice::new(col, k, grid);
                        let z = back.z_diag[[s, k, i]].clamp(-opts.z_clip, opts.z_clip);
                        let a = model
                            .nplayer_best_response(&slice, stats, &[z], n_players)
                            .ok_or_else(|| {
                                Error::invalid("missing closed-form best response")
                            })?;
                        out[k * n_players + i] = a[0];
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        let mut proposal = Array3::zeros((n_scenarios, k_steps, n_players));
        for (s, row) in proposals.into_iter().enumerate() {
            for k in 0..k_steps {
                for i in 0..n_players {
                    proposal[[s, k, i]] = row[k * n_players + i];
                }
            }
        }

        let mut raw_dist = 0.0_f64;
        ndarray::Zip::from(&proposal)
            .and(&controls)
            .for_each(|&new, &old| raw_dist = raw_dist.max((new - old).abs()));
        let factor = prev_dist.map(|p| if p > 0.0 { raw_dist / p } else { 0.0 });
        if factor.map(|f| f > 0.9).unwrap_or(false) {
            sticky_damp = true;
        }
        let damp = sticky_damp && raw_dist > opts.tol_fp;
        let applied_dist = if damp {
            let lambda = opts.damping;
            ndarray::Zip::from(&mut controls)
                .and(&proposal)
                .for_each(|old, &new| *old += lambda * (new - *old));
            raw_dist * lambda
        } else {
            controls.assign(&proposal);
            raw_dist
        };
        fp_history.push(applied_dist);
        prev_dist = Some(raw_dist);
        if applied_dist <= opts.tol_fp {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NoConvergence {
            solver: "nplayer-br",
            iterations: opts.max_iter,
            last_distance: fp_history.last().copied().unwrap_or(f64::INFINITY),
            tolerance: opts.tol_fp,
            report: None,
        });
    }

    // Final consistent sweep under the converged controls.
    let states = forward_particles(model, grid, &increments, &controls, &x0)?;
    let table = stats_table(model, grid, &states, &controls)?;
    let back = backward_values(model, grid, &states, &increments, &controls, &table, basis)?;

    let y0_per_player: Vec<f64> = (0..n_players)
        .map(|i| {
            let vals: Vec<f64> = (0..n_scenarios).map(|s| back.y[[s, 0, i]]).collect();
            mean(&vals)
        })
        .collect();
    let scen_means: Vec<f64> = (0..n_scenarios)
        .map(|s| {
            let vals: Vec<f64> = (0..n_players).map(|i| back.raw0[[s, i]]).collect();
            mean(&vals)
        })
        .collect();
    let y0 = Estimate {
        value: mean(&scen_means),
        se: if n_scenarios > 1 {
            sample_std(&scen_means) / (n_scenarios as f64).sqrt()
        } else {
            0.0
        },
    };

    Ok(NPlayerSolution {
        n_players,
        n_scenarios,
        grid: grid.clone(),
        seed,
        states,
        increments,
        controls,
        y: back.y,
        z_diag: back.z_diag,
        y0,
        y0_per_player,
        fp_history,
        basis: basis.clone(),
    })
}

const ZSUM_LABEL: u64 = 0x7a73_756d_4469_6167;

/// Estimate the control-coupling diagnostic
/// `zsum = (1/N)·Σ_i E[Σ_j ∫ |Z^{ij}_t|² dt]`, the sum running over all
/// players `j` including `i` itself.
///
/// The diagonal term comes from the stored `Z^{ii}` ensembles. For each
/// player `i`, the cross components `Z^{ij}` are regressed from the own
/// martingale residual against the *other* players' increments, over a
/// deterministic random subset of `min(N−1, 8)` partners, scaled back by
/// `(N−1)/|subset|`. For a single player the diagnostic reduces to the
/// own `∫ E|Z|² dt`.
pub fn zsum_diagnostic(
    model: &dyn GameModel,
    solution: &NPlayerSolution,
    seed: u64,
) -> Result<f64> {
    let n = solution.n_players;
    let n_scen = solution.n_scenarios;
    let grid = &solution.grid;
    let k_steps = grid.steps();
    let dt = grid.dt();
    let basis = &solution.basis;
    let n_stats = model.n_stats();
    let n_feat = feature_count(basis, n_stats);
    let lambda = basis.ridge_for(n_scen);
    let subset_size = (n - 1).min(8);
    let table = stats_table(model, grid, &solution.states, &solution.controls)?;

    // Deterministic partner subsets per player (sample without replacement).
    let subsets: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut stream = PathStream::new(derive_seed(seed, ZSUM_LABEL), i as u64);
            let mut pool: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut chosen = Vec::with_capacity(subset_size);
            for _ in 0..subset_size {
                let idx = (stream.next_uniform() * pool.len() as f64) as usize;
                chosen.push(pool.swap_remove(idx.min(pool.len() - 1)));
            }
            chosen.sort_unstable();
            chosen
        })
        .collect();

    let per_player: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let own: f64 = (0..k_steps)
                .map(|k| {
                    let col = solution.z_diag.slice(s![.., k, i]);
                    col.iter().map(|z| z * z).sum::<f64>() / n_scen as f64 * dt
                })
                .sum();
            if subset_size == 0 {
                return Ok(own);
            }
            let mut integral_by_partner = vec![0.0_f64; subset_size];
            let mut design = Array2::zeros((n_scen, n_feat));
            let mut row = vec![0.0; n_feat];
            for k in 0..k_steps {
                for s in 0..n_scen {
                    let col = solution.states.slice(s![s, .., i..i + 1]);
                    let slice = PathSlice::new(col, k, grid);
                    let stats = &table[s * (k_steps + 1) + k];
                    fill_feature_row(basis, &slice, stats, &mut row);
                    for (c, &v) in row.iter().enumerate() {
                        design[[s, c]] = v;
                    }
                }
                // Martingale residual of player i, reconstructed from the
                // stored explicit scheme: C_k = Y_k − f·Δt.
                let resid: Vec<f64> = (0..n_scen)
                    .map(|s| {
                        let col = solution.states.slice(s![s, .., i..i + 1]);
                        let slice = PathSlice::new(col, k, grid);
                        let stats = &table[s * (k_steps + 1) + k];
                        let f = model.running_reward(
                            &slice,
                            stats,
                            &[solution.controls[[s, k, i]]],
                        );
                        solution.y[[s, k + 1, i]] - (solution.y[[s, k, i]] - f * dt)
                    })
                    .collect();
                let targets: Vec<Vec<f64>> = subsets[i]
                    .iter()
                    .map(|&j| {
                        (0..n_scen)
                            .map(|s| resid[s] * solution.increments[[s, k, j]] / dt)
                            .collect()
                    })
                    .collect();
                let target_refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
                // Cross loadings are state feedbacks as well: fit them on the
                // state columns so near-constant interaction columns cannot
                // inflate the fitted magnitudes.
                let design_state = design.slice(s![.., ..n_feat - n_stats]);
                let betas = ridge_fit_multi(design_state, &target_refs, lambda, k)?;
                for (jj, beta) in betas.iter().enumerate() {
                    let fit = fitted_values(design_state, beta);
                    let msq = mean(&fit.iter().map(|z| z * z).collect::<Vec<_>>());
                    integral_by_partner[jj] += msq * dt;
                }
            }
            let cross: f64 = integral_by_partner.iter().sum();
            Ok(own + cross * (n - 1) as f64 / subset_size as f64)
        })
        .collect::<Result<_>>()?;
    Ok(mean(&per_player))
}
