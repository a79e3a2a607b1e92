//! Distances, theoretical rate bounds and empirical convergence-rate fits.
//!
//! Marginal one-dimensional Wasserstein-2 distances are computed exactly via
//! quantile coupling (weighted clouds included); a small-cloud exact solver
//! based on the Hungarian algorithm is provided to validate the marginal
//! route and for genuinely multivariate clouds. Sorting uses `total_cmp` and
//! every accumulation runs in a fixed order, so all distances are
//! bit-reproducible and symmetric in their arguments.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{mean, sample_std};
use crate::measure::MeasureFlow;
use crate::mfg::{simulate_equilibrium, MfgSolution};
use crate::model::GameModel;
use crate::paths::Estimate;
use crate::rng::derive_seed;

/// Hard cap on the exact assignment solver (`O(n³)` time, `O(n²)` memory).
pub const EXACT_W2_CAP: usize = 512;

fn validate_cloud(name: &'static str, xs: &[f64], ws: Option<&[f64]>) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("{name}: empty cloud")));
    }
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::invalid(format!("{name}: non-finite support point")));
        }
    }
    let total = match ws {
        None => xs.len() as f64,
        Some(w) => {
            if w.len() != xs.len() {
                return Err(Error::DimensionMismatch {
                    context: "wasserstein2_1d",
                    expected: format!("{} weights", xs.len()),
                    got: format!("{}", w.len()),
                });
            }
            let mut t = 0.0;
            for &wi in w {
                if !wi.is_finite() || wi < 0.0 {
                    return Err(Error::invalid(format!(
                        "{name}: weights must be finite and non-negative"
                    )));
                }
                t += wi;
            }
            t
        }
    };
    if total <= 0.0 {
        return Err(Error::invalid(format!("{name}: total weight is zero")));
    }
    Ok(total)
}

/// Exact one-dimensional Wasserstein-2 distance between two weighted clouds
/// via quantile-function coupling. Weights `None` mean uniform; weights are
/// self-normalized. For two unweighted clouds of equal size this reduces to
/// the sorted-sample matching.
pub fn wasserstein2_1d(
    xs: &[f64],
    wx: Option<&[f64]>,
    ys: &[f64],
    wy: Option<&[f64]>,
) -> Result<f64> {
    let tx = validate_cloud("wasserstein2_1d lhs", xs, wx)?;
    let ty = validate_cloud("wasserstein2_1d rhs", ys, wy)?;

    let sorted = |vals: &[f64], ws: Option<&[f64]>, total: f64| -> Vec<(f64, f64)> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        idx.into_iter()
            .map(|i| {
                let w = ws.map(|w| w[i]).unwrap_or(1.0) / total;
                (vals[i], w)
            })
            .collect()
    };
    let a = sorted(xs, wx, tx);
    let b = sorted(ys, wy, ty);

    // Walk the merged breakpoints of the two quantile functions, pairing
    // mass segments in quantile order.
    let mut i = 0;
    let mut j = 0;
    let mut rem_a = a[0].1;
    let mut rem_b = b[0].1;
    let mut acc = 0.0_f64;
    while i < a.len() && j < b.len() {
        if rem_a <= 0.0 {
            i += 1;
            if i < a.len() {
                rem_a = a[i].1;
            }
            continue;
        }
        if rem_b <= 0.0 {
            j += 1;
            if j < b.len() {
                rem_b = b[j].1;
            }
            continue;
        }
        let seg = rem_a.min(rem_b);
        let diff = a[i].0 - b[j].0;
        acc += seg * diff * diff;
        rem_a -= seg;
        rem_b -= seg;
    }
    Ok(acc.max(0.0).sqrt())
}

/// Exact Wasserstein-2 distance between two unweighted clouds of equal size
/// in `ℝ^dim` (optimal assignment, Hungarian algorithm with potentials).
///
/// Capped at [`EXACT_W2_CAP`] points. Inputs are canonicalized by
/// lexicographic order before solving, so the result is bitwise symmetric.
pub fn wasserstein2_exact_small<'v>(a: ArrayView2<'v, f64>, b: ArrayView2<'v, f64>) -> Result<f64> {
    let n = a.nrows();
    if b.nrows() != n || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "wasserstein2_exact_small",
            expected: format!("two ({n}, {}) clouds", a.ncols()),
            got: format!("({}, {}) vs ({}, {})", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("wasserstein2_exact_small: empty clouds"));
    }
    if n > EXACT_W2_CAP {
        return Err(Error::SizeCap {
            context: "wasserstein2_exact_small",
            n,
            cap: EXACT_W2_CAP,
        });
    }
    for &v in a.iter().chain(b.iter()) {
        if !v.is_finite() {
            return Err(Error::invalid(
                "wasserstein2_exact_small: non-finite support point",
            ));
        }
    }

    // Canonical order: the lexicographically smaller cloud is the row side.
    let lex_le = a
        .iter()
        .zip(b.iter())
        .find_map(|(x, y)| match x.total_cmp(y) {
            std::cmp::Ordering::Equal => None,
            ord => Some(ord != std::cmp::Ordering::Greater),
        })
        .unwrap_or(true);
    let (rows, cols) = if lex_le { (a, b) } else { (b, a) };

    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut c = 0.0;
            for d in 0..rows.ncols() {
                let diff = rows[[i, d]] - cols[[j, d]];
                c += diff * diff;
            }
            cost[[i, j]] = c;
        }
    }

    // Hungarian algorithm with row/column potentials (1-indexed buffers).
    let inf = f64::INFINITY;
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut p = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        total += cost[[p[j] - 1, j - 1]];
    }
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Wasserstein flow distance between two measure flows on the same grid:
/// the square root of the trapezoid integral of
/// `e^{β(s−T)}·Σ_c [W₂²(feature marginals) + W₂²(action marginals)]`.
///
/// The exponential weight is normalized to 1 at the horizon (an equivalent
/// metric with tolerance-friendly scale). Clouds may differ in size.
pub fn flow_distance_beta(
    a: &MeasureFlow,
    b: &MeasureFlow,
    grid: &TimeGrid,
    beta: f64,
) -> Result<f64> {
    if a.nodes() != b.nodes() || a.nodes() != grid.nodes() {
        return Err(Error::DimensionMismatch {
            context: "flow_distance_beta",
            expected: format!("two flows with {} nodes", grid.nodes()),
            got: format!("{} and {}", a.nodes(), b.nodes()),
        });
    }
    let horizon = grid.horizon();
    let dt = grid.dt();
    let last = grid.steps();
    let mut total = 0.0;
    for k in 0..=last {
        let sa = a.slice(k).view();
        let sb = b.slice(k).view();
        if sa.feature_dim() != sb.feature_dim() || sa.action_dim() != sb.action_dim() {
            return Err(Error::DimensionMismatch {
                context: "flow_distance_beta",
                expected: format!(
                    "slice {k} with {} features, {} action dims",
                    sa.feature_dim(),
                    sa.action_dim()
                ),
                got: format!("{} features, {} action dims", sb.feature_dim(), sb.action_dim()),
            });
        }
        let wa: Option<Vec<f64>> = sa.weights().map(|w| w.to_vec());
        let wb: Option<Vec<f64>> = sb.weights().map(|w| w.to_vec());
        let mut d2 = 0.0;
        for c in 0..sa.feature_dim() {
            let xa: Vec<f64> = sa.features().column(c).to_vec();
            let xb: Vec<f64> = sb.features().column(c).to_vec();
            let w = wasserstein2_1d(&xa, wa.as_deref(), &xb, wb.as_deref())?;
            d2 += w * w;
        }
        for c in 0..sa.action_dim() {
            let xa: Vec<f64> = sa.actions().column(c).to_vec();
            let xb: Vec<f64> = sb.actions().column(c).to_vec();
            let w = wasserstein2_1d(&xa, wa.as_deref(), &xb, wb.as_deref())?;
            d2 += w * w;
        }
        let trap = if k == 0 || k == last { 0.5 } else { 1.0 };
        total += trap * dt * (beta * (grid.time(k) - horizon)).exp() * d2;
    }
    Ok(total.max(0.0).sqrt())
}

/// Theoretical empirical-measure convergence rate `r(N, n, q)` for `N`
/// samples of an `n`-dimensional law with a finite `q`-th moment, `q > 2`:
///
/// * `n < 4`:  `N^{−1/2} + N^{−(q−2)/q}`, excluding `q = 4`;
/// * `n = 4`:  `N^{−1/2}·ln(1+N) + N^{−(q−2)/q}`, excluding `q = 4`;
/// * `n > 4`:  `N^{−2/n} + N^{−(q−2)/q}`, excluding `q = n/(n−2)`.
pub fn rate_bound(n_samples: usize, dim: usize, q: f64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("rate_bound requires at least one sample"));
    }
    if dim == 0 {
        return Err(Error::invalid("rate_bound requires dimension >= 1"));
    }
    if !(q > 2.0) {
        return Err(Error::invalid("rate_bound requires a moment order q > 2"));
    }
    let n = n_samples as f64;
    let moment_term = n.powf(-(q - 2.0) / q);
    const EDGE_TOL: f64 = 1e-12;
    if dim <= 4 {
        if (q - 4.0).abs() < EDGE_TOL {
            return Err(Error::ExcludedRateCase {
                n: dim,
                q,
                reason: "q = 4 sits on the logarithmic boundary for n <= 4".into(),
            });
        }
        let main = if dim < 4 {
            n.powf(-0.5)
        } else {
            n.powf(-0.5) * (1.0 + n).ln()
        };
        Ok(main + moment_term)
    } else {
        let q_edge = dim as f64 / (dim as f64 - 2.0);
        if (q - q_edge).abs() < EDGE_TOL {
            return Err(Error::ExcludedRateCase {
                n: dim,
                q,
                reason: format!("q = n/(n−2) = {q_edge} is excluded for n > 4"),
            });
        }
        Ok(n.powf(-2.0 / dim as f64) + moment_term)
    }
}

const GAMMA_REF_LABEL: u64 = 0x6761_6d6d_6152_6566;
const GAMMA_REP_LABEL: u64 = 0x6761_6d6d_6152_6570;

/// Monte-Carlo estimate of the control-law convergence quantity
///
/// `γ_N = sup_t E[ W₂²(empirical law of N equilibrium states at t, limit law)
///               + W₂²(empirical law of N equilibrium actions at t, limit law) ]`.
///
/// `n_rep` fresh N-tuples are simulated under the equilibrium feedback of
/// `solution`; the limit law is approximated by an independent reference
/// cloud of `reference_size ≥ 10·N` equilibrium paths.
pub fn gamma_n_estimate(
    model: &dyn GameModel,
    solution: &MfgSolution,
    n: usize,
    n_rep: usize,
    reference_size: usize,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 || n_rep == 0 {
        return Err(Error::invalid("gamma_n_estimate requires n >= 1, n_rep >= 1"));
    }
    if reference_size < 10 * n {
        return Err(Error::invalid(format!(
            "gamma_n_estimate: reference size {reference_size} is below 10·N = {}",
            10 * n
        )));
    }
    let grid = solution.paths.grid().clone();
    let k_steps = grid.steps();
    let dims = model.dims();
    let (ref_states, ref_actions) =
        simulate_equilibrium(model, solution, reference_size, derive_seed(seed, GAMMA_REF_LABEL))?;

    let mut per_rep: Vec<Vec<f64>> = Vec::with_capacity(n_rep);
    for r in 0..n_rep {
        let rep_seed = derive_seed(derive_seed(seed, GAMMA_REP_LABEL), r as u64);
        let (states, actions) = simulate_equilibrium(model, solution, n, rep_seed)?;
        let mut curve = Vec::with_capacity(k_steps + 1);
        for k in 0..=k_steps {
            let mut d2 = 0.0;
            for c in 0..dims.state {
                let xs: Vec<f64> = (0..n).map(|p| states[[p, k, c]]).collect();
                let rs: Vec<f64> = (0..reference_size).map(|p| ref_states[[p, k, c]]).collect();
                let w = wasserstein2_1d(&xs, None, &rs, None)?;
                d2 += w * w;
            }
            if k < k_steps {
                for c in 0..dims.action {
                    let xs: Vec<f64> = (0..n).map(|p| actions[[p, k, c]]).collect();
                    let rs: Vec<f64> =
                        (0..reference_size).map(|p| ref_actions[[p, k, c]]).collect();
                    let w = wasserstein2_1d(&xs, None, &rs, None)?;
                    d2 += w * w;
                }
            }
            curve.push(d2);
        }
        per_rep.push(curve);
    }

    // Mean curve over replicates, sup over grid times, SE at the argmax.
    let mut best = f64::NEG_INFINITY;
    let mut best_se = 0.0;
    for k in 0..=k_steps {
        let vals: Vec<f64> = per_rep.iter().map(|c| c[k]).collect();
        let m = mean(&vals);
        if m > best {
            best = m;
            best_se = if vals.len() > 1 {
                sample_std(&vals) / (vals.len() as f64).sqrt()
            } else {
                0.0
            };
        }
    }
    Ok(Estimate {
        value: best,
        se: best_se,
    })
}

/// Least-squares fit of `ln(estimate)` against `ln(N)`.
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Fit a log-log convergence slope, silently dropping non-positive or
/// non-finite estimates (they carry no rate information).
pub fn fit_loglog_slope(ns: &[f64], estimates: &[f64]) -> Result<SlopeFit> {
    if ns.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_loglog_slope",
            expected: format!("{} estimates", ns.len()),
            got: format!("{}", estimates.len()),
        });
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(estimates)
        .filter(|(&n, &e)| n > 0.0 && e > 0.0 && n.is_finite() && e.is_finite())
        .map(|(&n, &e)| (n.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid(
            "fit_loglog_slope needs at least two positive, finite points",
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid(
            "fit_loglog_slope: all sample sizes are equal",
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = syy - slope * sxy;
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        n_points: pts.len(),
    })
}

/// One row of a convergence-rate table.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub n: usize,
    pub estimate: f64,
    pub se: f64,
    pub theory_bound: f64,
    pub quantity: String,
    pub model: String,
    pub seed: u64,
}

/// Collection of rate rows, serializable as CSV with the stable header
/// `N,estimate,se,theory_bound,quantity,model,seed`.
#[derive(Debug, Clone, Default)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn push(&mut self, row: RateRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,estimate,se,theory_bound,quantity,model,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n, r.estimate, r.se, r.theory_bound, r.quantity, r.model, r.seed
            ));
        }
        out
    }

    /// Rows of one quantity, as `(N, estimate)` pairs.
    pub fn series(&self, quantity: &str) -> (Vec<f64>, Vec<f64>) {
        let mut ns = Vec::new();
        let mut es = Vec::new();
        for r in &self.rows {
            if r.quantity == quantity {
                ns.push(r.n as f64);
                es.push(r.estimate);
            }
        }
        (ns, es)
    }
}

/// Weighted `q`-quantile (left-continuous) of a cloud; weights are
/// self-normalized.
pub fn weighted_quantile(values: &[f64], weights: Option<&[f64]>, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("quantile level must lie in [0, 1]"));
    }
    let total = validate_cloud("weighted_quantile", values, weights)?;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &idx {
        cum += weights.map(|w| w[i]).unwrap_or(1.0) / total;
        if cum >= q {
            return Ok(values[i]);
        }
    }
    Ok(values[*idx.last().expect("non-empty")])
}
