//! Forward path ensembles, Girsanov reweighting, and ensemble serialization.
//!
//! Under the base measure the state is driftless, `dX = σ(t, X) dW`, and all
//! controlled laws are obtained by reweighting path functionals with
//! stochastic-exponential densities built from the model's drift kernel.
//! Euler paths, Brownian increments and log-weights are stored per path so
//! the same ensemble can be reweighted under many candidate controls.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use rayon::prelude::*;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{mean, sample_std, standard_error};
use crate::measure::MeasureFlow;
use crate::model::GameModel;
use crate::rng::PathStream;

/// Per-increment clip bound on log-weight increments.
///
/// `exp(±30)` spans thirteen decades in either direction, far beyond what a
/// usable importance weight can contribute; clipping prevents a single
/// degenerate increment from flushing the whole estimator to NaN/overflow
/// while the audit counter keeps the intervention visible.
pub const LOG_WEIGHT_CLIP: f64 = 30.0;

/// Read-only view of one path truncated at node `k` (a "path prefix").
///
/// Coefficient code receives this view; nothing past node `k` is meaningful
/// for predictable quantities and models must not read beyond it.
#[derive(Clone, Copy)]
pub struct PathSlice<'a> {
    states: ArrayView2<'a, f64>,
    k: usize,
    grid: &'a TimeGrid,
}

impl<'a> PathSlice<'a> {
    pub fn new(states: ArrayView2<'a, f64>, k: usize, grid: &'a TimeGrid) -> Self {
        debug_assert!(k < states.nrows());
        PathSlice { states, k, grid }
    }

    /// Current node index.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Current time `t_k`.
    pub fn t(&self) -> f64 {
        self.grid.time(self.k)
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid
    }

    /// Component `c` of the current state `X_{t_k}`.
    pub fn state(&self, c: usize) -> f64 {
        self.states[[self.k, c]]
    }

    /// Current state as a view.
    pub fn current(&self) -> ArrayView1<'a, f64> {
        self.states.index_axis_move(ndarray::Axis(0), self.k)
    }

    /// Component `c` of the state at node `j ≤ k`.
    pub fn state_at(&self, j: usize, c: usize) -> f64 {
        debug_assert!(j <= self.k);
        self.states[[j, c]]
    }

    /// Component `c` of the lagged state `X_{t_k − lag}`.
    ///
    /// Lagged values are left-constant in time on the grid and zero before
    /// time zero (the delayed-coefficient convention).
    pub fn lagged_state(&self, lag: f64, c: usize) -> f64 {
        let t_lag = self.t() - lag;
        if t_lag < 0.0 {
            0.0
        } else {
            self.states[[self.grid.floor_index(t_lag), c]]
        }
    }
}

/// Monte-Carlo ensemble of Euler paths under the base measure.
///
/// `states` has shape `(M, K+1, m)`, `increments` has shape `(M, K, d)` and
/// stores the raw Brownian increments `ΔW_k` used to build the paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    states: Array3<f64>,
    increments: Array3<f64>,
    grid: TimeGrid,
    seed: u64,
}

impl PathEnsemble {
    /// Assemble an ensemble from raw arrays (shape-checked).
    pub fn from_parts(
        states: Array3<f64>,
        increments: Array3<f64>,
        grid: TimeGrid,
        seed: u64,
    ) -> Result<Self> {
        let (mp, nodes, _m) = states.dim();
        let (mi, steps, _d) = increments.dim();
        if mp != mi || nodes != grid.nodes() || steps != grid.steps() {
            return Err(Error::DimensionMismatch {
                context: "PathEnsemble::from_parts",
                expected: format!("states (M, {}, m), increments (M, {}, d)", grid.nodes(), grid.steps()),
                got: format!("states {:?}, increments {:?}", states.dim(), increments.dim()),
            });
        }
        Ok(PathEnsemble {
            states,
            increments,
            grid,
            seed,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.states.dim().0
    }

    pub fn state_dim(&self) -> usize {
        self.states.dim().2
    }

    pub fn noise_dim(&self) -> usize {
        self.increments.dim().2
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn increments(&self) -> &Array3<f64> {
        &self.increments
    }

    /// Prefix view of path `p` at node `k`.
    pub fn slice(&self, p: usize, k: usize) -> PathSlice<'_> {
        PathSlice::new(
            self.states.index_axis(ndarray::Axis(0), p),
            k,
            &self.grid,
        )
    }

    /// Brownian increment `ΔW_k` of path `p`.
    pub fn increment(&self, p: usize, k: usize) -> ArrayView1<'_, f64> {
        self.increments
            .index_axis(ndarray::Axis(0), p)
            .index_axis_move(ndarray::Axis(0), k)
    }
}

/// Simulate `n_paths` Euler paths of the driftless state equation from `x0`.
///
/// Each path draws from its own counter-based stream derived from
/// `(seed, path index)`, so the ensemble is bit-reproducible for a fixed
/// seed regardless of thread count, and any sub-ensemble is unchanged by
/// enlarging `n_paths`.
pub fn simulate_state_paths(
    model: &dyn GameModel,
    grid: &TimeGrid,
    n_paths: usize,
    x0: &[f64],
    seed: u64,
) -> Result<PathEnsemble> {
    let dims = model.dims();
    let (m, d) = (dims.state, dims.noise);
    if x0.len() != m {
        return Err(Error::DimensionMismatch {
            context: "simulate_state_paths",
            expected: format!("x0 of length {m}"),
            got: format!("{}", x0.len()),
        });
    }
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let k_steps = grid.steps();
    let nodes = grid.nodes();
    let sqrt_dt = grid.dt().sqrt();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut stream = PathStream::new(seed, p as u64);
            let mut states = vec![0.0; nodes * m];
            let mut incrs = vec![0.0; k_steps * d];
            states[..m].copy_from_slice(x0);
            let mut sigma = vec![0.0; m * d];
            for k in 0..k_steps {
                for j in 0..d {
                    incrs[k * d + j] = sqrt_dt * stream.next_std_normal();
                }
                let view = ArrayView2::from_shape((nodes, m), &states)
                    .expect("row buffer has grid shape");
                let slice = PathSlice::new(view, k, grid);
                model.sigma_into(&slice, &mut sigma);
                for c in 0..m {
                    let mut dx = 0.0;
                    for j in 0..d {
                        dx += sigma[c * d + j] * incrs[k * d + j];
                    }
                    let next = states[k * m + c] + dx;
                    if !next.is_finite() {
                        return Err(Error::NonFinite {
                            context: "simulate_state_paths",
                            path: Some(p),
                            step: Some(k),
                        });
                    }
                    states[(k + 1) * m + c] = next;
                }
            }
            Ok((states, incrs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut states = Array3::zeros((n_paths, nodes, m));
    let mut increments = Array3::zeros((n_paths, k_steps, d));
    for (p, (srow, irow)) in rows.into_iter().enumerate() {
        for k in 0..nodes {
            for c in 0..m {
                states[[p, k, c]] = srow[k * m + c];
            }
        }
        for k in 0..k_steps {
            for j in 0..d {
                increments[[p, k, j]] = irow[k * d + j];
            }
        }
    }
    PathEnsemble::from_parts(states, increments, grid.clone(), seed)
}

/// Predictable control field: action of path `p` on `[t_k, t_{k+1})`.
///
/// Shape `(M, K, q)` with `q` the action dimension.
#[derive(Debug, Clone)]
pub struct ControlEnsemble {
    pub actions: Array3<f64>,
}

impl ControlEnsemble {
    /// Constant control field `a` for `n_paths` paths on `grid`.
    pub fn constant(grid: &TimeGrid, n_paths: usize, a: &[f64]) -> Self {
        let q = a.len();
        let mut actions = Array3::zeros((n_paths, grid.steps(), q));
        for p in 0..n_paths {
            for k in 0..grid.steps() {
                for c in 0..q {
                    actions[[p, k, c]] = a[c];
                }
            }
        }
        ControlEnsemble { actions }
    }

    pub fn n_paths(&self) -> usize {
        self.actions.dim().0
    }

    pub fn steps(&self) -> usize {
        self.actions.dim().1
    }

    pub fn action_dim(&self) -> usize {
        self.actions.dim().2
    }

    pub fn action(&self, p: usize, k: usize) -> ArrayView1<'_, f64> {
        self.actions
            .index_axis(ndarray::Axis(0), p)
            .index_axis_move(ndarray::Axis(0), k)
    }
}

/// Cumulative stochastic-exponential densities per path and node.
#[derive(Debug, Clone)]
pub struct WeightEnsemble {
    log_weights: Array2<f64>,
    clip_count: u64,
}

impl WeightEnsemble {
    /// Unit weights for `n_paths` paths (the base measure itself).
    pub fn unit(n_paths: usize, nodes: usize) -> Self {
        WeightEnsemble {
            log_weights: Array2::zeros((n_paths, nodes)),
            clip_count: 0,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.log_weights.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.log_weights.ncols()
    }

    /// Density `D_{t_k}` of path `p`.
    pub fn weight(&self, p: usize, k: usize) -> f64 {
        self.log_weights[[p, k]].exp()
    }

    pub fn log_weight(&self, p: usize, k: usize) -> f64 {
        self.log_weights[[p, k]]
    }

    /// All path densities at node `k`.
    pub fn weights_at(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.weight(p, k)).collect()
    }

    /// Terminal densities `D_T`.
    pub fn terminal_weights(&self) -> Vec<f64> {
        self.weights_at(self.nodes() - 1)
    }

    /// How many log-weight increments hit the `±30` clip.
    pub fn clip_count(&self) -> u64 {
        self.clip_count
    }

    /// Pointwise convex blend toward `other` in weight space:
    /// `(1−λ)·w_self + λ·w_other` per path and node. Used by damped
    /// fixed-point updates.
    pub fn blend(&self, other: &WeightEnsemble, lambda: f64) -> WeightEnsemble {
        let mut log_weights = self.log_weights.clone();
        log_weights.zip_mut_with(&other.log_weights, |a, &b| {
            *a = ((1.0 - lambda) * a.exp() + lambda * b.exp()).ln();
        });
        WeightEnsemble {
            log_weights,
            clip_count: self.clip_count.max(other.clip_count),
        }
    }
}

/// Stochastic-exponential weights for the control field `controls` with
/// coefficients frozen at the measure flow `flow`.
///
/// The log-density increment over `[t_k, t_{k+1}]` is
/// `b_k·ΔW_k − ½‖b_k‖²Δt` with `b_k` the model's drift kernel evaluated at
/// the path prefix, the flow slice at `t_k` and the path's current action.
pub fn girsanov_weights(
    model: &dyn GameModel,
    paths: &PathEnsemble,
    controls: &ControlEnsemble,
    flow: &MeasureFlow,
) -> Result<WeightEnsemble> {
    let m_paths = paths.n_paths();
    let k_steps = paths.grid().steps();
    let d = paths.noise_dim();
    if controls.n_paths() != m_paths || controls.steps() != k_steps {
        return Err(Error::DimensionMismatch {
            context: "girsanov_weights",
            expected: format!("controls ({m_paths}, {k_steps}, q)"),
            got: format!("{:?}", controls.actions.dim()),
        });
    }
    if flow.nodes() != paths.grid().nodes() {
        return Err(Error::DimensionMismatch {
            context: "girsanov_weights",
            expected: format!("flow with {} nodes", paths.grid().nodes()),
            got: format!("{}", flow.nodes()),
        });
    }
    let dt = paths.grid().dt();
    let n_stats = model.n_stats();
    // Interaction statistics are integrals over the slice clouds: compute
    // them once per step, not per path.
    let stats_by_step: Vec<Vec<f64>> = (0..k_steps)
        .map(|k| {
            let mut s = vec![0.0; n_stats];
            model.interaction_stats(&flow.slice(k).view(), &mut s);
            s
        })
        .collect();

    let per_path: Vec<(Vec<f64>, u64)> = (0..m_paths)
        .into_par_iter()
        .map(|p| -> Result<(Vec<f64>, u64)> {
            let mut logw = vec![0.0; k_steps + 1];
            let mut clips = 0u64;
            let mut b = vec![0.0; d];
            for k in 0..k_steps {
                let slice = paths.slice(p, k);
                let action = controls.action(p, k);
                model.drift_into(
                    &slice,
                    &stats_by_step[k],
                    action.as_slice().expect("contiguous action row"),
                    &mut b,
                );
                let dw = paths.increments.index_axis(ndarray::Axis(0), p);
                let mut inc = 0.0;
                let mut b_sq = 0.0;
                for j in 0..d {
                    inc += b[j] * dw[[k, j]];
                    b_sq += b[j] * b[j];
                }
                inc -= 0.5 * b_sq * dt;
                if !inc.is_finite() {
                    return Err(Error::NonFinite {
                        context: "girsanov_weights",
                        path: Some(p),
                        step: Some(k),
                    });
                }
                if inc.abs() > LOG_WEIGHT_CLIP {
                    inc = inc.clamp(-LOG_WEIGHT_CLIP, LOG_WEIGHT_CLIP);
                    clips += 1;
                }
                logw[k + 1] = logw[k] + inc;
            }
            Ok((logw, clips))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut log_weights = Array2::zeros((m_paths, k_steps + 1));
    let mut clip_count = 0u64;
    for (p, (row, clips)) in per_path.into_iter().enumerate() {
        for (k, lw) in row.into_iter().enumerate() {
            log_weights[[p, k]] = lw;
        }
        clip_count += clips;
    }
    Ok(WeightEnsemble {
        log_weights,
        clip_count,
    })
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Expectation of `values` under the reweighted measure.
///
/// With `self_normalized = false` the estimator is `mean(w·v)` (unbiased,
/// weights are exact densities with unit mean); with `self_normalized = true`
/// it is `Σ w·v / Σ w` (exact for constants, delta-method standard error).
pub fn reweighted_expectation(
    values: &[f64],
    weights: &[f64],
    self_normalized: bool,
) -> Result<Estimate> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "reweighted_expectation",
            expected: "matching non-empty values/weights".into(),
            got: format!("{} values, {} weights", values.len(), weights.len()),
        });
    }
    for (&v, &w) in values.iter().zip(weights) {
        if !v.is_finite() || !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(
                "reweighted_expectation needs finite values and finite non-negative weights",
            ));
        }
    }
    let contributions: Vec<f64> = values.iter().zip(weights).map(|(&v, &w)| w * v).collect();
    let mean_w = mean(weights);
    if mean_w == 0.0 {
        return Err(Error::invalid(
            "reweighted_expectation: all weights are zero",
        ));
    }
    if !self_normalized {
        Ok(Estimate {
            value: mean(&contributions),
            se: standard_error(&contributions),
        })
    } else {
        let value = mean(&contributions) / mean_w;
        // Delta-method standard error of the ratio estimator.
        let centered: Vec<f64> = values
            .iter()
            .zip(weights)
            .map(|(&v, &w)| w * (v - value))
            .collect();
        let se = sample_std(&centered) / (mean_w * (values.len() as f64).sqrt());
        Ok(Estimate { value, se })
    }
}

const MFGB_MAGIC: &[u8; 4] = b"MFGB";
const MFGB_VERSION: u32 = 1;

/// Serialize an ensemble: header
/// `magic "MFGB", version u32, M u64, K u64, m u32, d u32, seed u64`,
/// then states as little-endian f64 row-major `[path][node][component]`,
/// then increments as `[path][step][component]`.
pub fn write_mfgb<W: Write>(paths: &PathEnsemble, out: &mut W) -> Result<()> {
    out.write_all(MFGB_MAGIC)?;
    out.write_all(&MFGB_VERSION.to_le_bytes())?;
    out.write_all(&(paths.n_paths() as u64).to_le_bytes())?;
    out.write_all(&(paths.grid().steps() as u64).to_le_bytes())?;
    out.write_all(&(paths.state_dim() as u32).to_le_bytes())?;
    out.write_all(&(paths.noise_dim() as u32).to_le_bytes())?;
    out.write_all(&paths.seed().to_le_bytes())?;
    for &v in paths.states.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in paths.increments.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Deserialize an ensemble written by [`write_mfgb`]. The time grid is not
/// part of the format and must be supplied (its step count is validated).
pub fn read_mfgb<R: Read>(input: &mut R, grid: &TimeGrid) -> Result<PathEnsemble> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MFGB_MAGIC {
        return Err(Error::invalid("not an MFGB stream (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != MFGB_VERSION {
        return Err(Error::invalid(format!(
            "unsupported MFGB version {version}"
        )));
    }
    input.read_exact(&mut u64buf)?;
    let m_paths = u64::from_le_bytes(u64buf) as usize;
    input.read_exact(&mut u64buf)?;
    let k_steps = u64::from_le_bytes(u64buf) as usize;
    input.read_exact(&mut u32buf)?;
    let m = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    if k_steps != grid.steps() {
        return Err(Error::invalid(format!(
            "MFGB stream has {k_steps} steps but the grid has {}",
            grid.steps()
        )));
    }
    let mut read_f64 = |n: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        input.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let states_raw = read_f64(m_paths * (k_steps + 1) * m)?;
    let incr_raw = read_f64(m_paths * k_steps * d)?;
    let states = Array3::from_shape_vec((m_paths, k_steps + 1, m), states_raw)
        .map_err(|e| Error::invalid(format!("MFGB states shape: {e}")))?;
    let increments = Array3::from_shape_vec((m_paths, k_steps, d), incr_raw)
        .map_err(|e| Error::invalid(format!("MFGB increments shape: {e}")))?;
    PathEnsemble::from_parts(states, increments, grid.clone(), seed)
}
