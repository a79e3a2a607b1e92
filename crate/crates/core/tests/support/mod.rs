//! Shared fixtures for the integration suites: small helper models and two
//! independent finite-difference oracles (an HJB/Fokker–Planck solver for
//! the mean-field value and a tensor-grid HJB solver for the two-player
//! game). The oracles share no code with the crate's Monte-Carlo solvers —
//! different discretization, different error profile — so agreement is
//! meaningful evidence.

#![allow(dead_code)]

use mfglab::{
    ActionSet, CaseStudy, Dims, FeatureLayout, GameModel, MeasureView, PathSlice, ScalarFn,
};

/// Wrapper hiding a model's closed-form maximizer and best response, forcing
/// the numeric search paths.
pub struct HideClosedForms<M: GameModel>(pub M);

impl<M: GameModel> GameModel for HideClosedForms<M> {
    fn name(&self) -> &'static str {
        "hidden-closed-forms"
    }
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn action_set(&self) -> &ActionSet {
        self.0.action_set()
    }
    fn reference_action(&self) -> Vec<f64> {
        self.0.reference_action()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.0.initial_state()
    }
    fn feature_layout(&self) -> FeatureLayout {
        self.0.feature_layout()
    }
    fn n_stats(&self) -> usize {
        self.0.n_stats()
    }
    fn interaction_stats(&self, xi: &MeasureView<'_>, out: &mut [f64]) {
        self.0.interaction_stats(xi, out)
    }
    fn sigma_into(&self, path: &PathSlice<'_>, out: &mut [f64]) {
        self.0.sigma_into(path, out)
    }
    fn drift_into(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64], out: &mut [f64]) {
        self.0.drift_into(path, stats, action, out)
    }
    fn running_reward(&self, path: &PathSlice<'_>, stats: &[f64], action: &[f64]) -> f64 {
        self.0.running_reward(path, stats, action)
    }
    fn terminal_reward(&self, path: &PathSlice<'_>, terminal_stats: &[f64]) -> f64 {
        self.0.terminal_reward(path, terminal_stats)
    }
    fn maximizer(&self, _p: &PathSlice<'_>, _s: &[f64], _z: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn lipschitz_hint(&self) -> f64 {
        self.0.lipschitz_hint()
    }
}

/// Parameters of the linear-quadratic case-study oracle configuration used
/// across the suites.
#[derive(Debug, Clone, Copy)]
pub struct OracleParams {
    pub sigma: f64,
    pub k_revert: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub f_amp: f64,
    pub g_amp: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            sigma: 1.0,
            k_revert: 0.5,
            kappa1: 0.8,
            kappa2: 0.6,
            f_amp: 1.0,
            g_amp: 0.25,
            a_lo: -1.0,
            a_hi: 1.0,
            x0: 0.3,
            horizon: 1.0,
        }
    }
}

impl OracleParams {
    pub fn model(&self) -> CaseStudy {
        CaseStudy::new(
            ActionSet::interval(self.a_lo, self.a_hi).unwrap(),
            vec![self.x0],
            self.sigma,
            self.kappa1,
            self.kappa2,
            self.k_revert,
            ScalarFn::Tanh,
            self.f_amp,
            ScalarFn::Sin,
            self.g_amp,
        )
        .unwrap()
    }

    fn f_of(&self, x: f64) -> f64 {
        self.f_amp * x.tanh()
    }

    fn g_of(&self, x: f64) -> f64 {
        self.g_amp * x.sin()
    }

    fn clamp_a(&self, z: f64) -> f64 {
        z.clamp(self.a_lo, self.a_hi)
    }
}

/// Solve a symmetric tridiagonal-ish system `(I − c·D₂)v = rhs` with Neumann
/// ends (ghost node copies), `D₂` the standard three-point Laplacian times
/// `½σ²`.
fn thomas_implicit_diffusion(v: &mut [f64], rhs: &[f64], c: f64) {
    let n = v.len();
    // Tridiagonal coefficients: interior (-c, 1+2c, -c); ends fold the ghost
    // node in: (1+c, -c).
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    for i in 0..n {
        let (l, u) = if i == 0 {
            (0.0, -c)
        } else if i == n - 1 {
            (-c, 0.0)
        } else {
            (-c, -c)
        };
        lower[i] = l;
        upper[i] = u;
        diag[i] = 1.0 - l - u; // rows sum to one: mass-friendly Neumann walls
    }
    // Forward sweep.
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = upper[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / m;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m;
    }
    v[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        v[i] = dp[i] - cp[i] * v[i + 1];
    }
}

/// Finite-difference value of the scalar case-study mean-field game.
///
/// The measure enters the running reward additively and state-independently
/// (`κ₁⟨ξ,f⟩ + κ₂⟨ξ,ā⟩`), so the feedback PDE decouples: solve the HJB with
/// the couplings dropped, push the initial law forward through the resulting
/// drift, and add `∫ (κ₁ m_f + κ₂ m_a) dt` back to the value at `(0, x₀)`.
pub fn fd_mfg_value(p: &OracleParams) -> f64 {
    let n_x = 1201;
    let n_t = 4000;
    let span = 6.0 * p.sigma * p.horizon.sqrt() + 2.0;
    let x_lo = p.x0 - span;
    let x_hi = p.x0 + span;
    let dx = (x_hi - x_lo) / (n_x - 1) as f64;
    let dt = p.horizon / n_t as f64;
    let xs: Vec<f64> = (0..n_x).map(|i| x_lo + i as f64 * dx).collect();
    let half_sig2 = 0.5 * p.sigma * p.sigma;
    let c = dt * half_sig2 / (dx * dx);

    // Backward HJB (couplings dropped): v_t + ½σ²v_xx + H₀(x, σv_x) = 0,
    // H₀ = â·z − ½â² − k·x·z, â = clamp(z), z = σ·v_x. The feedback drift
    // σ(â − kx) is stored per time level for the forward sweep.
    let mut v: Vec<f64> = xs.iter().map(|&x| p.g_of(x)).collect();
    let mut drift = vec![vec![0.0; n_x]; n_t + 1];
    let v_x = |v: &[f64], i: usize| -> f64 {
        if i == 0 {
            (v[1] - v[0]) / dx
        } else if i == n_x - 1 {
            (v[n_x - 1] - v[n_x - 2]) / dx
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * dx)
        }
    };
    for i in 0..n_x {
        let z = p.sigma * v_x(&v, i);
        drift[n_t][i] = p.sigma * (p.clamp_a(z) - p.k_revert * xs[i]);
    }
    let mut rhs = vec![0.0; n_x];
    for n in (0..n_t).rev() {
        for i in 0..n_x {
            let z = p.sigma * v_x(&v, i);
            let a = p.clamp_a(z);
            let h0 = a * z - 0.5 * a * a - p.k_revert * xs[i] * z;
            rhs[i] = v[i] + dt * h0;
        }
        thomas_implicit_diffusion(&mut v, &rhs.clone(), c);
        for i in 0..n_x {
            let z = p.sigma * v_x(&v, i);
            drift[n][i] = p.sigma * (p.clamp_a(z) - p.k_revert * xs[i]);
        }
    }
    // Value at (0, x₀) by linear interpolation.
    let pos = (p.x0 - x_lo) / dx;
    let i0 = (pos.floor() as usize).min(n_x - 2);
    let w = pos - i0 as f64;
    let v00 = (1.0 - w) * v[i0] + w * v[i0 + 1];

    // Forward Fokker–Planck under the feedback drift: explicit conservative
    // upwind advection, implicit diffusion, renormalized mass.
    let mut rho = vec![0.0; n_x];
    // Narrow Gaussian stand-in for the point mass at x₀.
    let s0 = 2.0 * dx;
    for i in 0..n_x {
        rho[i] = (-((xs[i] - p.x0) / s0).powi(2) / 2.0).exp();
    }
    let norm: f64 = rho.iter().sum::<f64>() * dx;
    rho.iter_mut().for_each(|r| *r /= norm);

    let mean_f = |rho: &[f64]| -> f64 {
        rho.iter()
            .zip(&xs)
            .map(|(&r, &x)| r * p.f_of(x))
            .sum::<f64>()
            * dx
    };
    let mean_a = |rho: &[f64], mu: &[f64]| -> f64 {
        // Recover â from the stored drift: â = drift/σ + k·x.
        rho.iter()
            .zip(mu.iter().zip(&xs))
            .map(|(&r, (&d, &x))| r * (d / p.sigma + p.k_revert * x))
            .sum::<f64>()
            * dx
    };

    let mut coupling = vec![0.0; n_t + 1];
    coupling[0] = p.kappa1 * mean_f(&rho) + p.kappa2 * mean_a(&rho, &drift[0]);
    let mut flux = vec![0.0; n_x + 1];
    for n in 0..n_t {
        // Upwind fluxes at the faces; zero flux at the walls.
        flux[0] = 0.0;
        flux[n_x] = 0.0;
        for i in 1..n_x {
            let mu_face = 0.5 * (drift[n][i - 1] + drift[n][i]);
            flux[i] = if mu_face >= 0.0 {
                mu_face * rho[i - 1]
            } else {
                mu_face * rho[i]
            };
        }
        for i in 0..n_x {
            rhs[i] = rho[i] - dt * (flux[i + 1] - flux[i]) / dx;
        }
        thomas_implicit_diffusion(&mut rho, &rhs.clone(), c);
        let mass: f64 = rho.iter().sum::<f64>() * dx;
        rho.iter_mut().for_each(|r| *r /= mass);
        coupling[n + 1] = p.kappa1 * mean_f(&rho) + p.kappa2 * mean_a(&rho, &drift[n + 1]);
    }
    // Trapezoid integral of the coupling stream.
    let mut integral = 0.0;
    for n in 0..=n_t {
        let w = if n == 0 || n == n_t { 0.5 } else { 1.0 };
        integral += w * coupling[n] * dt;
    }
    v00 + integral
}

/// Finite-difference value of the symmetric two-player case-study game on a
/// tensor grid: player one's value `u(t, x₁, x₂)` with equilibrium feedback
/// `â₁ = clamp(σ∂₁u + κ₂/2)` and the partner control read off the swapped
/// grid. Fully explicit scheme (upwind advection, centered diffusion).
pub fn fd_two_player_value(p: &OracleParams) -> f64 {
    let n_x = 161;
    let span = 4.5 * p.sigma * p.horizon.sqrt() + 1.0;
    let x_lo = p.x0 - span;
    let x_hi = p.x0 + span;
    let dx = (x_hi - x_lo) / (n_x - 1) as f64;
    let half_sig2 = 0.5 * p.sigma * p.sigma;
    // Explicit diffusion stability in two dimensions.
    let dt_max = 0.2 * dx * dx / (2.0 * half_sig2);
    let n_t = (p.horizon / dt_max).ceil() as usize;
    let dt = p.horizon / n_t as f64;
    let xs: Vec<f64> = (0..n_x).map(|i| x_lo + i as f64 * dx).collect();
    let idx = |i: usize, j: usize| i * n_x + j;

    let mut u: Vec<f64> = (0..n_x * n_x)
        .map(|r| p.g_of(xs[r / n_x]))
        .collect();
    let mut d1 = vec![0.0; n_x * n_x];
    let mut a1 = vec![0.0; n_x * n_x];

    for _ in 0..n_t {
        // ∂₁u (centered, one-sided at walls) and own feedback.
        for i in 0..n_x {
            for j in 0..n_x {
                let du = if i == 0 {
                    (u[idx(1, j)] - u[idx(0, j)]) / dx
                } else if i == n_x - 1 {
                    (u[idx(n_x - 1, j)] - u[idx(n_x - 2, j)]) / dx
                } else {
                    (u[idx(i + 1, j)] - u[idx(i - 1, j)]) / (2.0 * dx)
                };
                d1[idx(i, j)] = du;
                a1[idx(i, j)] = p.clamp_a(p.sigma * du + 0.5 * p.kappa2);
            }
        }
        let mut next = u.clone();
        for i in 0..n_x {
            for j in 0..n_x {
                let r = idx(i, j);
                let a_own = a1[r];
                // Partner feedback from the swapped grid point.
                let a_other = a1[idx(j, i)];
                let mu1 = p.sigma * (a_own - p.k_revert * xs[i]);
                let mu2 = p.sigma * (a_other - p.k_revert * xs[j]);
                // Upwind first derivatives.
                let u1 = if mu1 >= 0.0 {
                    if i == n_x - 1 {
                        0.0
                    } else {
                        (u[idx(i + 1, j)] - u[r]) / dx
                    }
                } else if i == 0 {
                    0.0
                } else {
                    (u[r] - u[idx(i - 1, j)]) / dx
                };
                let u2 = if mu2 >= 0.0 {
                    if j == n_x - 1 {
                        0.0
                    } else {
                        (u[idx(i, j + 1)] - u[r]) / dx
                    }
                } else if j == 0 {
                    0.0
                } else {
                    (u[r] - u[idx(i, j - 1)]) / dx
                };
                // Centered diffusion with copy ghosts at the walls.
                let up = if i == n_x - 1 { u[r] } else { u[idx(i + 1, j)] };
                let dn = if i == 0 { u[r] } else { u[idx(i - 1, j)] };
                let lp = if j == n_x - 1 { u[r] } else { u[idx(i, j + 1)] };
                let ln_ = if j == 0 { u[r] } else { u[idx(i, j - 1)] };
                let lap = (up - 2.0 * u[r] + dn + lp - 2.0 * u[r] + ln_) / (dx * dx);
                let reward = -0.5 * a_own * a_own
                    + 0.5 * p.kappa1 * (p.f_of(xs[i]) + p.f_of(xs[j]))
                    + 0.5 * p.kappa2 * (a_own + a_other);
                next[r] = u[r] + dt * (half_sig2 * lap + mu1 * u1 + mu2 * u2 + reward);
            }
        }
        u = next;
    }

    // Bilinear interpolation at (x₀, x₀).
    let pos = (p.x0 - x_lo) / dx;
    let i0 = (pos.floor() as usize).min(n_x - 2);
    let w = pos - i0 as f64;
    let v_lo = (1.0 - w) * u[idx(i0, i0)] + w * u[idx(i0 + 1, i0)];
    let v_hi = (1.0 - w) * u[idx(i0, i0 + 1)] + w * u[idx(i0 + 1, i0 + 1)];
    (1.0 - w) * v_lo + w * v_hi
}
