//! The model interface and the three built-in symmetric games.
//!
//! A model supplies the primitives of a weak-formulation stochastic
//! differential game on a fixed filtered space: the volatility `σ` of the
//! uncontrolled state, the Girsanov drift kernel `b` (controls act on the
//! state law only through the exponential-martingale change of measure), the
//! running reward `f`, the terminal reward `g`, and optionally a closed-form
//! Hamiltonian maximizer. Coefficients may depend on the joint state/control
//! law; that dependence is funneled through a short vector of interaction
//! statistics integrated once per measure slice.

use crate::action::ActionSet;
use crate::error::{Error, Result};
use crate::measure::{FeatureLayout, MeasureView};
use crate::paths::PathSlice;

/// State, noise and action dimensions of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub state: usize,
    pub noise: usize,
    pub action: usize,
}

/// Named scalar shape functions available to model coefficients.
///
/// All except `Identity` are bounded with Lipschitz constant at most one;
/// `Identity` is provided for closed-form test configurations and leaves
/// growth control to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarFn {
    Zero,
    Identity,
    Tanh,
    Sin,
    Cos,
    Logistic,
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Identity => x,
            ScalarFn::Tanh => x.tanh(),
            ScalarFn::Sin => x.sin(),
            ScalarFn::Cos => x.cos(),
            ScalarFn::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(ScalarFn::Zero),
            "identity" => Ok(ScalarFn::Identity),
            "tanh" => Ok(ScalarFn::Tanh),
            "sin" => Ok(ScalarFn::Sin),
            "cos" => Ok(ScalarFn::Cos),
            "logistic" => Ok(ScalarFn::Logistic),
            other => Err(Error::invalid(format!(
                "unknown scalar function '{other}' (expected zero|identity|tanh|sin|cos|logistic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalarFn::Zero => "zero",
            ScalarFn::Identity => "identity",
            ScalarFn::Tanh => "tanh",
            ScalarFn::Sin => "sin",
            ScalarFn::Cos => "cos",
            ScalarFn::Logistic => "logistic",
        }
    }
}

/// A weak-formulation game model.
///
/// Conventions:
/// * the state under the base measure is driftless: `dX = σ(t, X) dW`;
/// * `drift_into` returns the *Girsanov kernel* `b ∈ ℝ^d`; under the
///   controlled measure the state drift is `σ·b`;
/// * the Hamiltonian is `h = b·z + f` and maximizers are reported through
///   [`GameModel::maximizer`] when available in closed form.
pub trait GameModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn dims(&self) -> Dims;
    fn action_set(&self) -> &ActionSet;
    /// Reference action `a_o ∈ A` used to initialize fixed-point loops.
    fn reference_action(&self) -> Vec<f64>;
    /// Deterministic initial state `X_0`.
    fn initial_state(&self) -> Vec<f64>;
    /// Which state features the measure clouds must carry for this model.
    fn feature_layout(&self) -> FeatureLayout;

    /// Number of interaction statistics consumed by the coefficients.
    fn n_stats(&self) -> usize;
    /// Integrate the interaction statistics of one cloud into `out`.
    fn interaction_stats(&self, xi: &MeasureView<'_>, out: &mut [f64]);

    /// Volatility `σ(t_k, X_{·∧t_k})`, written row-major `m × d` into `out`.
    fn sigma_into(&self, path: &PathSlice<'_>, out: &mut [f64]);
    /// Girsanov drift kernel `b(t_k, X_{·∧t_k}, ξ, a) ∈ ℝ^d`.
    fn drift_into(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64], out: &mut [f64]);
    /// Running reward `f(t_k, X_{·∧t_k}, ξ, a)`.
    fn running_reward(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64]) -> f64;
    /// Terminal reward `g(X, ξ_T)`; `path` points at the terminal node.
    fn terminal_reward(&self, path: &PathSlice<'_>, terminal_stats: &[f64]) -> f64;

    /// Closed-form Hamiltonian maximizer `Λ(t, x, ξ, z)` when available.
    fn maximizer(&self, path: &PathSlice<'_>, stats: &[f64], z: &[f64]) -> Option<Vec<f64>>;

    /// Closed-form per-player best response in the `n`-player game (the
    /// maximizer including the own-action feedback through the empirical
    /// measure), when available.
    fn nplayer_best_response(
        &self,
        path: &PathSlice<'_>,
        stats: &[f64],
        z: &[f64],
        n_players: usize,
    ) -> Option<Vec<f64>> {
        let _ = (path, stats, z, n_players);
        None
    }

    /// Bound `R_N` on how strongly one player's action moves the coefficients
    /// of another player; enters the theoretical rate column.
    fn control_interaction_radius(&self, n_players: usize) -> f64 {
        let _ = n_players;
        0.0
    }

    /// Coarse Lipschitz scale used for the default Picard discount rate.
    fn lipschitz_hint(&self) -> f64 {
        1.0
    }
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(msg))
    }
}

fn require_finite(v: f64, what: &str) -> Result<()> {
    require(v.is_finite(), &format!("{what} must be finite, got {v}"))
}

/// Linear-quadratic-flavored symmetric game with mean interaction in both the
/// running reward and (optionally) the control average.
///
/// Per player: state `X = X_0 + σW` under the base measure, drift kernel
/// `b = a − k·x`, running reward
/// `−½|a|² + κ₁·⟨ξ, f⟩ + κ₂·⟨ξ, ā⟩`, terminal reward `g(X_T)`.
/// The Hamiltonian maximizer is the clamp `P_A(z)` (mean-field version) and
/// `P_A(z + κ₂/N)` with the own-action feedback in the `N`-player game, both
/// componentwise.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    action_set: ActionSet,
    x0: Vec<f64>,
    sigma: f64,
    kappa1: f64,
    kappa2: f64,
    k_revert: f64,
    f_fun: ScalarFn,
    f_amp: f64,
    g_fun: ScalarFn,
    g_amp: f64,
}

impl CaseStudy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        action_set: ActionSet,
        x0: Vec<f64>,
        sigma: f64,
        kappa1: f64,
        kappa2: f64,
        k_revert: f64,
        f_fun: ScalarFn,
        f_amp: f64,
        g_fun: ScalarFn,
        g_amp: f64,
    ) -> Result<Self> {
        require(
            x0.len() == action_set.dim(),
            "CaseStudy uses matching state and action dimensions",
        )?;
        require(sigma.is_finite() && sigma > 0.0, "sigma must be positive")?;
        for v in [kappa1, kappa2, k_revert, f_amp, g_amp] {
            require_finite(v, "CaseStudy parameter")?;
        }
        Ok(CaseStudy {
            action_set,
            x0,
            sigma,
            kappa1,
            kappa2,
            k_revert,
            f_fun,
            f_amp,
            g_fun,
            g_amp,
        })
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    fn f_of_state(&self, x: f64) -> f64 {
        self.f_amp * self.f_fun.eval(x)
    }
}

impl GameModel for CaseStudy {
    fn name(&self) -> &'static str {
        "case_study"
    }

    fn dims(&self) -> Dims {
        let m = self.x0.len();
        Dims {
            state: m,
            noise: m,
            action: m,
        }
    }

    fn action_set(&self) -> &ActionSet {
        &self.action_set
    }

    fn reference_action(&self) -> Vec<f64> {
        self.action_set.project(&vec![0.0; self.x0.len()]).unwrap()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout::Current
    }

    fn n_stats(&self) -> usize {
        2
    }

    fn interaction_stats(&self, xi: &MeasureView<'_>, out: &mut [f64]) {
        let m = self.x0.len();
        out[0] = xi.mean_feature_fn(0..m, |x| self.f_of_state(x));
        out[1] = xi.mean_action_sum();
    }

    fn sigma_into(&self, _path: &PathSlice<'_>, out: &mut [f64]) {
        let m = self.x0.len();
        out.fill(0.0);
        for c in 0..m {
            out[c * m + c] = self.sigma;
        }
    }

    fn drift_into(&self, path: &PathSlice<'_>, _stats: &[f64], action: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = action[c] - self.k_revert * path.state(c);
        }
    }

    fn running_reward(&self, _path: &PathSlice<'_>, stats: &[f64], action: &[f64]) -> f64 {
        let own_cost: f64 = action.iter().map(|a| a * a).sum::<f64>() / 2.0;
        -own_cost + self.kappa1 * stats[0] + self.kappa2 * stats[1]
    }

    fn terminal_reward(&self, path: &PathSlice<'_>, _terminal_stats: &[f64]) -> f64 {
        (0..self.x0.len())
            .map(|c| self.g_amp * self.g_fun.eval(path.state(c)))
            .sum()
    }

    fn maximizer(&self, _path: &PathSlice<'_>, _stats: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        Some(self.action_set.project(z).expect("z has action dim"))
    }

    fn nplayer_best_response(
        &self,
        _path: &PathSlice<'_>,
        _stats: &[f64],
        z: &[f64],
        n_players: usize,
    ) -> Option<Vec<f64>> {
        let shift = self.kappa2 / n_players as f64;
        let shifted: Vec<f64> = z.iter().map(|zi| zi + shift).collect();
        Some(self.action_set.project(&shifted).expect("z has action dim"))
    }

    fn control_interaction_radius(&self, n_players: usize) -> f64 {
        self.kappa2.abs() / n_players as f64
    }

    fn lipschitz_hint(&self) -> f64 {
        (1.0 + self.k_revert.abs())
            .max(self.kappa1.abs() * self.f_amp.abs())
            .max(self.kappa2.abs())
            .max(1.0)
    }
}

/// Scalar trading model where each player's drift is their own action and the
/// running reward carries a price-impact term linear in the population's mean
/// action: reward `γ(x)·⟨ξ, ā⟩ − ½a² − κ(x)`, terminal `g(X_T)`.
///
/// The quadratic own cost makes the maximizer the clamp `P_A(z)`; the
/// `N`-player best response picks up the own-action feedback
/// `P_A(z + γ(x)/N)`.
#[derive(Debug, Clone)]
pub struct PriceImpact {
    action_set: ActionSet,
    x0: f64,
    sigma: f64,
    gamma_fun: ScalarFn,
    gamma_amp: f64,
    penalty_fun: ScalarFn,
    penalty_amp: f64,
    g_fun: ScalarFn,
    g_amp: f64,
}

impl PriceImpact {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        action_set: ActionSet,
        x0: f64,
        sigma: f64,
        gamma_fun: ScalarFn,
        gamma_amp: f64,
        penalty_fun: ScalarFn,
        penalty_amp: f64,
        g_fun: ScalarFn,
        g_amp: f64,
    ) -> Result<Self> {
        require(action_set.dim() == 1, "PriceImpact is a scalar model")?;
        require(sigma.is_finite() && sigma > 0.0, "sigma must be positive")?;
        for v in [gamma_amp, penalty_amp, g_amp, x0] {
            require_finite(v, "PriceImpact parameter")?;
        }
        Ok(PriceImpact {
            action_set,
            x0,
            sigma,
            gamma_fun,
            gamma_amp,
            penalty_fun,
            penalty_amp,
            g_fun,
            g_amp,
        })
    }

    fn gamma(&self, x: f64) -> f64 {
        self.gamma_amp * self.gamma_fun.eval(x)
    }
}

impl GameModel for PriceImpact {
    fn name(&self) -> &'static str {
        "price_impact"
    }

    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            noise: 1,
            action: 1,
        }
    }

    fn action_set(&self) -> &ActionSet {
        &self.action_set
    }

    fn reference_action(&self) -> Vec<f64> {
        vec![self.action_set.project_scalar(0.0)]
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.x0]
    }

    fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout::Current
    }

    fn n_stats(&self) -> usize {
        1
    }

    fn interaction_stats(&self, xi: &MeasureView<'_>, out: &mut [f64]) {
        out[0] = xi.mean_action_sum();
    }

    fn sigma_into(&self, _path: &PathSlice<'_>, out: &mut [f64]) {
        out[0] = self.sigma;
    }

    fn drift_into(&self, _path: &PathSlice<'_>, _stats: &[f64], action: &[f64], out: &mut [f64]) {
        out[0] = action[0];
    }

    fn running_reward(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64]) -> f64 {
        let x = path.state(0);
        self.gamma(x) * stats[0] - 0.5 * action[0] * action[0]
            - self.penalty_amp * self.penalty_fun.eval(x)
    }

    fn terminal_reward(&self, path: &PathSlice<'_>, _terminal_stats: &[f64]) -> f64 {
        self.g_amp * self.g_fun.eval(path.state(0))
    }

    fn maximizer(&self, _path: &PathSlice<'_>, _stats: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.action_set.project_scalar(z[0])])
    }

    fn nplayer_best_response(
        &self,
        path: &PathSlice<'_>,
        _stats: &[f64],
        z: &[f64],
        n_players: usize,
    ) -> Option<Vec<f64>> {
        let shift = self.gamma(path.state(0)) / n_players as f64;
        Some(vec![self.action_set.project_scalar(z[0] + shift)])
    }

    fn control_interaction_radius(&self, n_players: usize) -> f64 {
        self.gamma_amp.abs() / n_players as f64
    }

    fn lipschitz_hint(&self) -> f64 {
        (self.gamma_amp.abs())
            .max(self.penalty_amp.abs())
            .max(self.g_amp.abs())
            .max(1.0)
    }
}

/// Scalar toy model with delayed coefficients: drift kernel and running
/// reward read the state and the population mean at `t − τ` (zero before
/// time zero), and the terminal reward is evaluated at `X_{T−τ}`.
#[derive(Debug, Clone)]
pub struct DelayToy {
    action_set: ActionSet,
    x0: f64,
    sigma: f64,
    tau: f64,
    b_state: f64,
    b_mean: f64,
    f_state: f64,
    f_mean: f64,
    g_amp: f64,
}

impl DelayToy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        action_set: ActionSet,
        x0: f64,
        sigma: f64,
        tau: f64,
        b_state: f64,
        b_mean: f64,
        f_state: f64,
        f_mean: f64,
        g_amp: f64,
    ) -> Result<Self> {
        require(action_set.dim() == 1, "DelayToy is a scalar model")?;
        require(sigma.is_finite() && sigma > 0.0, "sigma must be positive")?;
        require(tau.is_finite() && tau >= 0.0, "delay must be non-negative")?;
        for v in [b_state, b_mean, f_state, f_mean, g_amp, x0] {
            require_finite(v, "DelayToy parameter")?;
        }
        Ok(DelayToy {
            action_set,
            x0,
            sigma,
            tau,
            b_state,
            b_mean,
            f_state,
            f_mean,
            g_amp,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl GameModel for DelayToy {
    fn name(&self) -> &'static str {
        "delay_toy"
    }

    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            noise: 1,
            action: 1,
        }
    }

    fn action_set(&self) -> &ActionSet {
        &self.action_set
    }

    fn reference_action(&self) -> Vec<f64> {
        vec![self.action_set.project_scalar(0.0)]
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.x0]
    }

    fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout::CurrentAndLagged { lag: self.tau }
    }

    fn n_stats(&self) -> usize {
        1
    }

    fn interaction_stats(&self, xi: &MeasureView<'_>, out: &mut [f64]) {
        // Lagged-state mean: the lagged block sits after the m current
        // components (m = 1 here).
        out[0] = xi.mean_feature_fn(1..2, |x| x);
    }

    fn sigma_into(&self, _path: &PathSlice<'_>, out: &mut [f64]) {
        out[0] = self.sigma;
    }

    fn drift_into(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64], out: &mut [f64]) {
        let x_lag = path.lagged_state(self.tau, 0);
        out[0] = action[0] + self.b_state * x_lag.tanh() + self.b_mean * stats[0].tanh();
    }

    fn running_reward(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64]) -> f64 {
        let x_lag = path.lagged_state(self.tau, 0);
        -0.5 * action[0] * action[0] + self.f_state * x_lag.tanh()
            + self.f_mean * stats[0].tanh()
    }

    fn terminal_reward(&self, path: &PathSlice<'_>, _terminal_stats: &[f64]) -> f64 {
        self.g_amp * path.lagged_state(self.tau, 0).tanh()
    }

    fn maximizer(&self, _path: &PathSlice<'_>, _stats: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.action_set.project_scalar(z[0])])
    }

    fn lipschitz_hint(&self) -> f64 {
        (self.b_state.abs() + self.b_mean.abs())
            .max(self.f_state.abs() + self.f_mean.abs())
            .max(self.g_amp.abs())
            .max(1.0)
    }
}
