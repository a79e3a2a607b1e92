//! Uniform time grids on `[0, T]`.

use crate::error::{Error, Result};

/// Uniform partition `0 = t_0 < t_1 < … < t_K = T` with `t_k = k·Δt`.
///
/// All ensembles in the crate (paths, controls, measure flows, BSDE fields)
/// are indexed by the step index `k` of one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    /// Build a grid with `steps = K ≥ 1` uniform steps on `[0, horizon]`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!(
                "time horizon must be finite and positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    /// Terminal time `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `K`; the grid has `K + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid nodes, `K + 1`.
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    /// Step size `Δt = T / K`.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node time `t_k = k·Δt` (uses `T` exactly at `k = K`).
    pub fn time(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    /// Largest node index `j` with `t_j ≤ t`, saturating at the endpoints.
    ///
    /// Used for left-constant-in-time lagged lookups; negative times map to
    /// index 0 region handling done by the caller.
    pub fn floor_index(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let j = (t / self.dt).floor() as usize;
        j.min(self.steps)
    }
}
