//! Regression Monte-Carlo laboratory for weak-formulation mean-field games
//! and their N-player particle systems.
//!
//! The crate revolves around one structural idea: simulate the state once,
//! driftless, and let every control enter only through Girsanov densities
//! and through the sup-Hamiltonian generator of a backward SDE. Solvers are
//! then fixed-point iterations over deterministic maps of that single
//! ensemble, which makes them fast, parallel and bit-reproducible:
//!
//! * [`paths`] — driftless Euler ensembles, stochastic-exponential weights,
//!   binary serialization;
//! * [`bsde`] — regression Monte-Carlo BSDE solver with a residual-based
//!   `Z` estimator;
//! * [`mfg`] — Picard iteration for the mean-field equilibrium and for
//!   generalized McKean–Vlasov BSDEs, equilibrium resimulation, deviation
//!   certificates;
//! * [`nplayer`] — coupled particle solver with pooled symmetric
//!   regressions and damped best responses;
//! * [`metrics`] — Wasserstein distances, empirical-measure rate bounds,
//!   log-log slope fits;
//! * [`model`] — the game interface and three built-in symmetric games.
//!
//! Determinism contract: every result is a pure function of `(inputs,
//! seed)`; thread counts change wall-clock time only, never bits.

/// Crate version, embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod action;
pub mod bsde;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod linalg;
pub mod measure;
pub mod metrics;
pub mod mfg;
pub mod model;
pub mod nplayer;
pub mod paths;
pub mod rng;

pub use action::ActionSet;
pub use bsde::{
    martingale_residual_check, solve_bsde_regression, BsdeSolution, RegressionBasis,
};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use hamiltonian::{
    argmax_hamiltonian, best_response_fixed_point, hamiltonian, hamiltonian_with_measure,
    ArgmaxOptions,
};
pub use measure::{FeatureLayout, MeasureFlow, MeasureSlice, MeasureView};
pub use metrics::{
    fit_loglog_slope, flow_distance_beta, gamma_n_estimate, rate_bound, wasserstein2_1d,
    wasserstein2_exact_small, weighted_quantile, RateRow, RateTable, SlopeFit, EXACT_W2_CAP,
};
pub use mfg::{
    default_beta, empirical_flow, equilibrium_certificate, simulate_equilibrium,
    solve_generalized_mkv, solve_generalized_mkv_on, solve_mkv_bsde, Certificate, DeviationGain,
    FlowInit, MfgSolution, MfgSolverOptions, MkvDriver, MkvOptions, MkvSolution, PicardIteration,
    PicardReport,
};
pub use model::{CaseStudy, DelayToy, Dims, GameModel, PriceImpact, ScalarFn};
pub use nplayer::{solve_nplayer_particle, zsum_diagnostic, NPlayerOptions, NPlayerSolution};
pub use paths::{
    girsanov_weights, read_mfgb, reweighted_expectation, simulate_state_paths, write_mfgb,
    ControlEnsemble, Estimate, PathEnsemble, PathSlice, WeightEnsemble, LOG_WEIGHT_CLIP,
};
pub use rng::{derive_seed, PathStream};
