//! Hamiltonian evaluation and pointwise maximization.
//!
//! The (reduced) Hamiltonian of the weak formulation is
//! `h(t, x, ξ, z, a) = b(t, x, ξ, a)·z + f(t, x, ξ, a)`: affine in `z`,
//! and the only place the control enters the problem. Equilibrium controls
//! are pointwise maximizers of `h`; models with closed-form maximizers skip
//! the numeric search entirely.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::measure::{FeatureLayout, MeasureView};
use crate::model::GameModel;
use crate::paths::PathSlice;

/// Options for the numeric argmax (coarse grid scan plus golden-section
/// refinement on the bracketing cell).
#[derive(Debug, Clone, Copy)]
pub struct ArgmaxOptions {
    /// Number of cells in the coarse scan (the scan evaluates `n_grid + 1`
    /// equally spaced actions including both interval endpoints).
    pub n_grid: usize,
    /// Bracket width at which the golden-section refinement stops.
    pub tol: f64,
}

impl Default for ArgmaxOptions {
    fn default() -> Self {
        ArgmaxOptions {
            n_grid: 64,
            tol: 1e-8,
        }
    }
}

/// Evaluate `h = b·z + f` at one action, with interaction statistics already
/// integrated (the hot-loop entry point).
pub fn hamiltonian(
    model: &dyn GameModel,
    path: &PathSlice<'_>,
    stats: &[f64],
    z: &[f64],
    action: &[f64],
) -> f64 {
    let d = model.dims().noise;
    let mut b = vec![0.0; d];
    model.drift_into(path, stats, action, &mut b);
    let bz: f64 = b.iter().zip(z).map(|(bi, zi)| bi * zi).sum();
    bz + model.running_reward(path, stats, action)
}

/// Evaluate `h` against an explicit measure cloud.
pub fn hamiltonian_with_measure(
    model: &dyn GameModel,
    path: &PathSlice<'_>,
    xi: &MeasureView<'_>,
    z: &[f64],
    action: &[f64],
) -> f64 {
    let mut stats = vec![0.0; model.n_stats()];
    model.interaction_stats(xi, &mut stats);
    hamiltonian(model, path, stats.as_slice(), z, action)
}

/// Golden-section maximization on `[lo, hi]`, keeping the smallest maximizer
/// among numerically tied candidates. Returns `(argmax, max)`.
fn golden_section_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best_a = lo;
    let mut best_v = f(lo);
    let consider = |a: f64, v: f64, best_a: &mut f64, best_v: &mut f64| {
        if v > *best_v || (v == *best_v && a < *best_a) {
            *best_a = a;
            *best_v = v;
        }
    };
    let v_hi = f(hi);
    consider(hi, v_hi, &mut best_a, &mut best_v);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    consider(c, fc, &mut best_a, &mut best_v);
    consider(d, fd, &mut best_a, &mut best_v);
    while hi - lo > tol {
        if fc >= fd {
            // Keep the left sub-interval on ties: biases toward smaller actions.
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
            consider(c, fc, &mut best_a, &mut best_v);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
            consider(d, fd, &mut best_a, &mut best_v);
        }
    }
    (best_a, best_v)
}

/// Maximize a scalar function over `[lo, hi]` by coarse grid scan plus
/// golden-section refinement of the best bracket. Ties break toward the
/// smallest action.
pub(crate) fn maximize_on_interval<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    opts: ArgmaxOptions,
) -> (f64, f64) {
    if lo == hi {
        return (lo, f(lo));
    }
    let n = opts.n_grid.max(1);
    let step = (hi - lo) / n as f64;
    let mut best_i = 0usize;
    let mut best_a = lo;
    let mut best_v = f(lo);
    for i in 1..=n {
        let a = if i == n { hi } else { lo + i as f64 * step };
        let v = f(a);
        // Strict improvement only: on ties the earlier (smaller) action wins.
        if v > best_v {
            best_i = i;
            best_a = a;
            best_v = v;
        }
    }
    let bracket_lo = if best_i == 0 { lo } else { lo + (best_i - 1) as f64 * step };
    let bracket_hi = if best_i >= n { hi } else { lo + (best_i + 1) as f64 * step };
    let (ga, gv) = golden_section_max(f, bracket_lo.max(lo), bracket_hi.min(hi), opts.tol);
    if gv > best_v || (gv == best_v && ga < best_a) {
        (ga, gv)
    } else {
        (best_a, best_v)
    }
}

/// Pointwise Hamiltonian maximizer: the model's closed form when available,
/// otherwise a grid-plus-golden-section search (scalar action sets only).
///
/// Returns `(argmax, max value)`.
pub fn argmax_hamiltonian(
    model: &dyn GameModel,
    path: &PathSlice<'_>,
    stats: &[f64],
    z: &[f64],
    opts: ArgmaxOptions,
) -> Result<(Vec<f64>, f64)> {
    if let Some(a) = model.maximizer(path, stats, z) {
        debug_assert!(model.action_set().contains(&a, 1e-12));
        let v = hamiltonian(model, path, stats, z, &a);
        return Ok((a, v));
    }
    if model.action_set().dim() != 1 {
        return Err(Error::invalid(
            "numeric argmax requires a scalar action set; provide a closed-form maximizer for boxes",
        ));
    }
    let (lo, hi) = model.action_set().scalar_bounds();
    let f = |a: f64| hamiltonian(model, path, stats, z, &[a]);
    let (a, v) = maximize_on_interval(&f, lo, hi, opts);
    Ok((vec![a], v))
}

/// Symmetric best-response (Jacobi) iteration for the `N`-player game at one
/// time node.
///
/// `slices` are the players' path prefixes, `z_diag` the diagonal
/// `Z^{ii}`-row per player (shape `(N, d)`). Each sweep rebuilds the joint
/// empirical measure of `(states, actions)` — own action included — and
/// replaces every action with the (damped) best response. Models with a
/// closed-form per-player response converge in one sweep when the response
/// does not depend on the others' actions.
pub fn best_response_fixed_point(
    model: &dyn GameModel,
    slices: &[PathSlice<'_>],
    z_diag: ArrayView2<'_, f64>,
    damping: f64,
    tol: f64,
    max_iter: usize,
    opts: ArgmaxOptions,
) -> Result<Vec<Vec<f64>>> {
    let n = slices.len();
    if n == 0 || z_diag.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "best_response_fixed_point",
            expected: format!("{n} z rows"),
            got: format!("{}", z_diag.nrows()),
        });
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    let dims = model.dims();
    let q = dims.action;
    let layout = model.feature_layout();
    let feat_dim = layout.feature_dim(dims.state);

    // Player states never change during the sweep; build features once.
    let mut feats = Array2::zeros((n, feat_dim));
    for (i, s) in slices.iter().enumerate() {
        for c in 0..dims.state {
            feats[[i, c]] = s.state(c);
        }
        if let FeatureLayout::CurrentAndLagged { lag } = layout {
            for c in 0..dims.state {
                feats[[i, dims.state + c]] = s.lagged_state(lag, c);
            }
        }
    }

    let mut actions = Array2::zeros((n, q));
    let a_ref = model.reference_action();
    for i in 0..n {
        for c in 0..q {
            actions[[i, c]] = a_ref[c];
        }
    }

    let mut stats = vec![0.0; model.n_stats()];
    let mut last_dist = f64::INFINITY;
    for _iter in 0..max_iter {
        let view = MeasureView::new(feats.view(), actions.view(), None)?;
        model.interaction_stats(&view, &mut stats);
        let mut next = actions.clone();
        for i in 0..n {
            let z_i: Vec<f64> = z_diag.row(i).iter().copied().collect();
            let response = if let Some(a) =
                model.nplayer_best_response(&slices[i], &stats, &z_i, n)
            {
                a
            } else {
                // Generic route: re-integrate the statistics with the own
                // action replaced by each candidate.
                if q != 1 {
                    return Err(Error::invalid(
                        "generic best response requires a scalar action set",
                    ));
                }
                let (lo, hi) = model.action_set().scalar_bounds();
                let eval = |a: f64| {
                    let mut t = actions.clone();
                    t[[i, 0]] = a;
                    let v = MeasureView::new(feats.view(), t.view(), None)
                        .expect("consistent trial cloud");
                    let mut s = vec![0.0; model.n_stats()];
                    model.interaction_stats(&v, &mut s);
                    hamiltonian(model, &slices[i], &s, &z_i, &[a])
                };
                let (a_star, _) = maximize_on_interval(&eval, lo, hi, opts);
                vec![a_star]
            };
            for c in 0..q {
                next[[i, c]] = actions[[i, c]] + damping * (response[c] - actions[[i, c]]);
            }
        }
        last_dist = next
            .iter()
            .zip(actions.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        actions = next;
        if last_dist <= tol {
            return Ok((0..n)
                .map(|i| actions.row(i).iter().copied().collect())
                .collect());
        }
    }
    Err(Error::NoConvergence {
        solver: "best_response_fixed_point",
        iterations: max_iter,
        last_distance: last_dist,
        tolerance: tol,
        report: None,
    })
}
