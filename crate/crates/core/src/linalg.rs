//! Small dense linear algebra and deterministic reductions.
//!
//! The regression solvers only ever factor `B × B` normal matrices with `B`
//! in the single digits, so a hand-rolled Cholesky is all that is needed.
//! What *does* require care is determinism: every reduction over paths uses
//! a fixed chunk topology (chunk partials computed in parallel, combined
//! sequentially in index order), so results are bit-identical no matter how
//! many worker threads execute the map phase.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Chunk length for deterministic parallel reductions over paths.
pub(crate) const REDUCTION_CHUNK: usize = 2048;

/// Pairwise (cascade) summation with a fixed topology.
///
/// Deterministic for a given slice, and substantially more accurate than a
/// running sum on ensembles of 1e5-plus terms.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean via pairwise summation; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Sample standard deviation (denominator `n - 1`); 0 for fewer than two points.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    (pairwise_sum(&centered) / (n - 1) as f64).sqrt()
}

/// Monte-Carlo standard error of the mean of `xs`.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Deterministic parallel sum of `f(i)` over `i in 0..n`.
///
/// The index range is split into fixed chunks; chunk partials are computed
/// in parallel (any thread count), then combined sequentially in chunk
/// order, so the floating-point result never depends on scheduling.
pub fn par_indexed_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks: Vec<f64> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let vals: Vec<f64> = chunk.iter().map(|&i| f(i)).collect();
            pairwise_sum(&vals)
        })
        .collect();
    pairwise_sum(&chunks)
}

/// Cholesky factorization of a symmetric positive-definite matrix stored
/// row-major in `a` (length `n·n`). Returns the lower factor, row-major.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s.is_finite() && s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Factored symmetric positive-definite system, reusable across right-hand sides.
pub struct SpdSolver {
    lower: Vec<f64>,
    n: usize,
}

impl SpdSolver {
    /// Factor `a` (row-major `n × n`, assumed symmetric). Fails if the matrix
    /// is not numerically positive definite.
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        cholesky(a, n).map(|lower| SpdSolver { lower, n })
    }

    /// Solve `A x = b` using the stored factorization.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let l = &self.lower;
        // Forward substitution L y = b.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        // Back substitution Lᵀ x = y.
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        x
    }
}

/// Ridge least squares on a shared design matrix with several targets.
///
/// Column 0 is the intercept by convention. The remaining columns are
/// centered and scaled to unit standard deviation internally before the
/// normal equations are formed: polynomial bases on narrow state clouds and
/// near-constant statistic columns are otherwise so collinear with the
/// intercept that fitted values at individual points become numerically
/// unstable. The penalty `λ` acts on the standardized coefficients (so its
/// strength is scale-free and the intercept stays unpenalized, meaning a
/// constant target is reproduced exactly); the returned coefficients are
/// mapped back to the raw feature space and can be applied to raw rows.
///
/// `step` only labels the error on a singular system.
pub fn ridge_fit_multi(
    design: ArrayView2<'_, f64>,
    targets: &[&[f64]],
    lambda: f64,
    step: usize,
) -> Result<Vec<Vec<f64>>> {
    let m = design.nrows();
    let b = design.ncols();
    for t in targets {
        if t.len() != m {
            return Err(Error::DimensionMismatch {
                context: "ridge_fit_multi",
                expected: format!("{m} target rows"),
                got: format!("{}", t.len()),
            });
        }
    }

    // Pass 1: deterministic column moments (skipping the intercept).
    let moment_chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut sums = vec![0.0; b];
            let mut sq = vec![0.0; b];
            for &p in chunk {
                let row = design.row(p);
                for j in 1..b {
                    sums[j] += row[j];
                    sq[j] += row[j] * row[j];
                }
            }
            (sums, sq)
        })
        .collect();
    let mut mu = vec![0.0; b];
    let mut scale = vec![1.0; b];
    {
        let mut sums = vec![0.0; b];
        let mut sq = vec![0.0; b];
        for (cs, cq) in &moment_chunks {
            for j in 1..b {
                sums[j] += cs[j];
                sq[j] += cq[j];
            }
        }
        for j in 1..b {
            mu[j] = sums[j] / m as f64;
            let var = (sq[j] / m as f64 - mu[j] * mu[j]).max(0.0);
            let sd = var.sqrt();
            // Degenerate (constant) columns are centered to zero and left at
            // unit scale; the ridge then pins their coefficients harmlessly.
            scale[j] = if sd > 1e-12 * (1.0 + mu[j].abs()) {
                sd
            } else {
                1.0
            };
        }
    }

    // Pass 2: deterministic chunked accumulation of the standardized Gram
    // matrix and the per-target right-hand sides.
    struct Partial {
        gram: Vec<f64>,
        rhs: Vec<Vec<f64>>,
    }
    let n_t = targets.len();
    let row_chunks: Vec<Partial> = (0..m)
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut gram = vec![0.0; b * b];
            let mut rhs = vec![vec![0.0; b]; n_t];
            let mut std_row = vec![0.0; b];
            for &p in chunk {
                let row = design.row(p);
                std_row[0] = row[0];
                for j in 1..b {
                    std_row[j] = (row[j] - mu[j]) / scale[j];
                }
                for i in 0..b {
                    let ri = std_row[i];
                    for j in 0..=i {
                        gram[i * b + j] += ri * std_row[j];
                    }
                    for (t, target) in targets.iter().enumerate() {
                        rhs[t][i] += ri * target[p];
                    }
                }
            }
            Partial { gram, rhs }
        })
        .collect();

    let mut gram = vec![0.0; b * b];
    let mut rhs = vec![vec![0.0; b]; n_t];
    for part in &row_chunks {
        for (g, pg) in gram.iter_mut().zip(&part.gram) {
            *g += pg;
        }
        for (r, pr) in rhs.iter_mut().zip(&part.rhs) {
            for (x, px) in r.iter_mut().zip(pr) {
                *x += px;
            }
        }
    }
    // Symmetrize (only the lower triangle was accumulated).
    for i in 0..b {
        for j in (i + 1)..b {
            gram[i * b + j] = gram[j * b + i];
        }
    }
    // Ridge term, intercept unpenalized.
    for i in 1..b {
        gram[i * b + i] += lambda;
    }

    let solver = SpdSolver::new(&gram, b).ok_or(Error::SingularRegression { step })?;
    // Solve in standardized coordinates, then map back to raw features.
    Ok(rhs
        .iter()
        .map(|r| {
            let beta_std = solver.solve(r);
            let mut beta = vec![0.0; b];
            let mut intercept = beta_std[0];
            for j in 1..b {
                beta[j] = beta_std[j] / scale[j];
                intercept -= beta_std[j] * mu[j] / scale[j];
            }
            beta[0] = intercept;
            beta
        })
        .collect())
}

/// Fitted values `Φ β` for a coefficient vector from [`ridge_fit_multi`].
pub fn fitted_values(design: ArrayView2<'_, f64>, beta: &[f64]) -> Vec<f64> {
    let m = design.nrows();
    (0..m)
        .into_par_iter()
        .map(|p| {
            let row = design.row(p);
            let mut acc = 0.0;
            for (x, w) in row.iter().zip(beta) {
                acc += x * w;
            }
            acc
        })
        .collect()
}
