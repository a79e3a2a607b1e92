//! Action sets: compact intervals and axis-aligned boxes.

use crate::error::{Error, Result};

/// Compact axis-aligned action box `A = Π_i [lower_i, upper_i] ⊂ ℝ^k`.
///
/// The scalar case (`dim() == 1`) is the one the solvers optimize over;
/// the general box is supported for projections and componentwise-separable
/// best responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ActionSet {
    /// Interval `[lo, hi] ⊂ ℝ`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        ActionSet::box_set(vec![lo], vec![hi])
    }

    /// Axis-aligned box with the given per-component bounds.
    pub fn box_set(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid(
                "action box needs matching, non-empty bound vectors",
            ));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!(
                    "action bounds must be finite with lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(ActionSet { lower, upper })
    }

    /// Number of action components.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Scalar bounds `(lo, hi)`; panics if the set is not an interval.
    pub fn scalar_bounds(&self) -> (f64, f64) {
        assert_eq!(self.dim(), 1, "scalar_bounds on a non-interval action set");
        (self.lower[0], self.upper[0])
    }

    /// Componentwise Euclidean projection of `a` onto the box.
    ///
    /// For an axis-aligned box the Euclidean projection is the componentwise
    /// clamp, so this is exact (no iterative solve involved).
    pub fn project(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "ActionSet::project",
                expected: format!("{}", self.dim()),
                got: format!("{}", a.len()),
            });
        }
        Ok(a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect())
    }

    /// Scalar projection (clamp) for interval action sets.
    pub fn project_scalar(&self, a: f64) -> f64 {
        let (lo, hi) = self.scalar_bounds();
        a.clamp(lo, hi)
    }

    /// True if `a` lies in the box up to `tol` per component.
    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_projection_clamps() {
        let a = ActionSet::interval(-1.0, 1.0).unwrap();
        assert_eq!(a.project(&[0.4]).unwrap(), vec![0.4]);
        assert_eq!(a.project(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(a.project_scalar(-7.5), -1.0);
    }

    #[test]
    fn box_projection_is_componentwise() {
        let a = ActionSet::box_set(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(a.project(&[-5.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(ActionSet::interval(1.0, -1.0).is_err());
        assert!(ActionSet::interval(f64::NEG_INFINITY, 0.0).is_err());
        assert!(ActionSet::box_set(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = ActionSet::interval(0.0, 1.0).unwrap();
        assert!(a.project(&[0.1, 0.2]).is_err());
    }
}
