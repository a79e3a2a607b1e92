//! Weighted particle clouds approximating the flow of joint state/control laws.
//!
//! A [`MeasureSlice`] is the time-`t_k` cloud: one row of state features and
//! one action row per support point, plus positive weights (Girsanov densities
//! for change-of-measure laws, uniform weights for empirical `N`-particle
//! measures). A [`MeasureFlow`] is one slice per grid node. Model coefficients
//! never see the raw clouds; they receive a short vector of interaction
//! statistics integrated once per slice (weighted means of the interaction
//! functionals), which keeps coefficient evaluation O(1) per path.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;

/// Which state features a cloud carries per support point.
///
/// `Current` stores the time-`t_k` state (m components). `CurrentAndLagged`
/// additionally stores the state at `t_k - lag` (left-constant in time, zero
/// before time zero), giving `2m` feature components; this is what the
/// delayed models integrate against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureLayout {
    Current,
    CurrentAndLagged { lag: f64 },
}

impl FeatureLayout {
    /// Number of feature components for state dimension `m`.
    pub fn feature_dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureLayout::Current => state_dim,
            FeatureLayout::CurrentAndLagged { .. } => 2 * state_dim,
        }
    }
}

/// Borrowed view of one weighted cloud.
#[derive(Clone, Copy)]
pub struct MeasureView<'a> {
    feats: ArrayView2<'a, f64>,
    actions: ArrayView2<'a, f64>,
    /// `None` means uniform weights.
    weights: Option<ArrayView1<'a, f64>>,
}

impl<'a> MeasureView<'a> {
    pub fn new(
        feats: ArrayView2<'a, f64>,
        actions: ArrayView2<'a, f64>,
        weights: Option<ArrayView1<'a, f64>>,
    ) -> Result<Self> {
        let n = feats.nrows();
        if actions.nrows() != n || weights.map_or(false, |w| w.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "MeasureView::new",
                expected: format!("{n} rows in every component"),
                got: format!(
                    "actions {}, weights {:?}",
                    actions.nrows(),
                    weights.map(|w| w.len())
                ),
            });
        }
        if n == 0 {
            return Err(Error::invalid("measure cloud must be non-empty"));
        }
        Ok(MeasureView {
            feats,
            actions,
            weights,
        })
    }

    pub fn n_points(&self) -> usize {
        self.feats.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.feats.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn features(&self) -> ArrayView2<'a, f64> {
        self.feats
    }

    pub fn actions(&self) -> ArrayView2<'a, f64> {
        self.actions
    }

    pub fn weights(&self) -> Option<ArrayView1<'a, f64>> {
        self.weights
    }

    /// Self-normalized weighted mean of `value(p)` over support points.
    ///
    /// Self-normalization makes integration exact for constants even when the
    /// Monte-Carlo weight mass drifts slightly away from one.
    pub fn weighted_mean<F>(&self, value: F) -> f64
    where
        F: Fn(usize) -> f64,
    {
        let n = self.n_points();
        match self.weights {
            None => {
                let vals: Vec<f64> = (0..n).map(value).collect();
                pairwise_sum(&vals) / n as f64
            }
            Some(w) => {
                let contributions: Vec<f64> = (0..n).map(|p| w[p] * value(p)).collect();
                let mass: Vec<f64> = w.iter().copied().collect();
                let denom = pairwise_sum(&mass);
                debug_assert!(denom > 0.0, "weight mass must be positive");
                pairwise_sum(&contributions) / denom
            }
        }
    }

    /// Weighted mean of `f` summed over a contiguous range of feature columns.
    pub fn mean_feature_fn<F>(&self, cols: std::ops::Range<usize>, f: F) -> f64
    where
        F: Fn(f64) -> f64,
    {
        self.weighted_mean(|p| {
            let row = self.feats.row(p);
            cols.clone().map(|c| f(row[c])).sum()
        })
    }

    /// Weighted mean of the componentwise sum of the action.
    pub fn mean_action_sum(&self) -> f64 {
        self.weighted_mean(|p| self.actions.row(p).iter().sum())
    }

    /// Raw (un-normalized) mean weight; 1 for uniform clouds.
    pub fn mean_weight(&self) -> f64 {
        match self.weights {
            None => 1.0,
            Some(w) => {
                let mass: Vec<f64> = w.iter().copied().collect();
                pairwise_sum(&mass) / w.len() as f64
            }
        }
    }
}

/// Owned weighted cloud at one grid node.
#[derive(Debug, Clone)]
pub struct MeasureSlice {
    pub feats: Array2<f64>,
    pub actions: Array2<f64>,
    pub weights: Array1<f64>,
}

impl MeasureSlice {
    pub fn new(feats: Array2<f64>, actions: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = feats.nrows();
        if actions.nrows() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                context: "MeasureSlice::new",
                expected: format!("{n} rows"),
                got: format!("actions {}, weights {}", actions.nrows(), weights.len()),
            });
        }
        if n == 0 {
            return Err(Error::invalid("measure slice must be non-empty"));
        }
        for &w in weights.iter() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!(
                    "measure weights must be finite and non-negative, got {w}"
                )));
            }
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("measure slice has all-zero weights"));
        }
        Ok(MeasureSlice {
            feats,
            actions,
            weights,
        })
    }

    pub fn n_points(&self) -> usize {
        self.feats.nrows()
    }

    pub fn view(&self) -> MeasureView<'_> {
        MeasureView {
            feats: self.feats.view(),
            actions: self.actions.view(),
            weights: Some(self.weights.view()),
        }
    }
}

/// Flow of clouds, one per node of the shared time grid (`K + 1` slices).
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    slices: Vec<MeasureSlice>,
    layout: FeatureLayout,
}

impl MeasureFlow {
    /// Assemble a flow, checking that all slices share one cloud size and
    /// feature/action dimensions.
    pub fn new(slices: Vec<MeasureSlice>, layout: FeatureLayout) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::invalid("measure flow needs at least one slice"));
        }
        let n = slices[0].n_points();
        let fd = slices[0].feats.ncols();
        let ad = slices[0].actions.ncols();
        for (k, s) in slices.iter().enumerate() {
            if s.n_points() != n || s.feats.ncols() != fd || s.actions.ncols() != ad {
                return Err(Error::DimensionMismatch {
                    context: "MeasureFlow::new",
                    expected: format!("{n} points, {fd} features, {ad} action dims"),
                    got: format!(
                        "slice {k}: {} points, {} features, {} action dims",
                        s.n_points(),
                        s.feats.ncols(),
                        s.actions.ncols()
                    ),
                });
            }
        }
        Ok(MeasureFlow { slices, layout })
    }

    /// Degenerate flow: every slice is a point mass at `(x0-features, a_ref)`.
    pub fn point_mass(
        layout: FeatureLayout,
        x0: &[f64],
        a_ref: &[f64],
        nodes: usize,
    ) -> Result<Self> {
        let m = x0.len();
        let fd = layout.feature_dim(m);
        let mut feat = Array2::zeros((1, fd));
        for c in 0..m {
            feat[[0, c]] = x0[c];
        }
        if let FeatureLayout::CurrentAndLagged { .. } = layout {
            // Lag 0 at time zero: the lagged value convention (zero before
            // time zero) only matters once paths evolve; a point-mass prior
            // carries the initial state in both blocks.
            for c in 0..m {
                feat[[0, m + c]] = x0[c];
            }
        }
        let actions = Array2::from_shape_vec((1, a_ref.len()), a_ref.to_vec())
            .map_err(|e| Error::invalid(format!("point_mass actions: {e}")))?;
        let weights = Array1::ones(1);
        let slice = MeasureSlice::new(feat, actions, weights)?;
        MeasureFlow::new(vec![slice; nodes], layout)
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn nodes(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, k: usize) -> &MeasureSlice {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[MeasureSlice] {
        &self.slices
    }

    pub fn terminal(&self) -> &MeasureSlice {
        self.slices.last().expect("non-empty flow")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud() -> MeasureSlice {
        MeasureSlice::new(
            array![[0.0], [2.0], [4.0]],
            array![[1.0], [1.0], [4.0]],
            array![1.0, 1.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn weighted_means_are_self_normalized() {
        let s = cloud();
        let v = s.view();
        // E[x] = (0 + 2 + 2*4) / 4 = 2.5
        assert!((v.mean_feature_fn(0..1, |x| x) - 2.5).abs() < 1e-15);
        // E[a] = (1 + 1 + 2*4) / 4 = 2.5
        assert!((v.mean_action_sum() - 2.5).abs() < 1e-15);
        // Constants integrate exactly.
        assert_eq!(v.weighted_mean(|_| 7.0), 7.0);
    }

    #[test]
    fn uniform_view_matches_plain_mean() {
        let feats = array![[1.0], [3.0]];
        let acts = array![[0.0], [0.0]];
        let v = MeasureView::new(feats.view(), acts.view(), None).unwrap();
        assert_eq!(v.mean_feature_fn(0..1, |x| x), 2.0);
        assert_eq!(v.mean_weight(), 1.0);
    }

    #[test]
    fn rejects_inconsistent_slices() {
        let a = cloud();
        let b = MeasureSlice::new(array![[0.0], [1.0]], array![[0.0], [0.0]], array![1.0, 1.0])
            .unwrap();
        assert!(MeasureFlow::new(vec![a, b], FeatureLayout::Current).is_err());
    }

    #[test]
    fn rejects_zero_mass_and_negative_weights() {
        assert!(MeasureSlice::new(array![[0.0]], array![[0.0]], array![0.0]).is_err());
        assert!(MeasureSlice::new(array![[0.0]], array![[0.0]], array![-1.0]).is_err());
    }

    #[test]
    fn point_mass_flow_has_requested_nodes() {
        let f =
            MeasureFlow::point_mass(FeatureLayout::Current, &[0.5], &[0.0], 11).unwrap();
        assert_eq!(f.nodes(), 11);
        assert_eq!(f.slice(3).n_points(), 1);
        assert_eq!(f.slice(3).feats[[0, 0]], 0.5);
    }
}
