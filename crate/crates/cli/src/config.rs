//! Experiment configuration: a TOML file with `[model]`, `[numerics]`,
//! `[sweep]` and `[output]` sections.
//!
//! Required fields fail loudly with their name when absent; optional fields
//! carry the documented defaults listed in `configs/case_study.toml`. The
//! seed is always required — runs must never depend on wall-clock state.

use std::fmt;
use std::path::{Path, PathBuf};

use mfglab::{
    ActionSet, CaseStudy, DelayToy, GameModel, MfgSolverOptions, NPlayerOptions, PriceImpact,
    RegressionBasis, ScalarFn, TimeGrid,
};
use serde::Deserialize;

/// Configuration-level failure: maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// One of `case_study`, `price_impact`, `delay_toy`.
    pub tag: String,
    pub horizon: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
    pub a_min: f64,
    pub a_max: f64,
    // case_study constants.
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub k_revert: Option<f64>,
    pub f_fun: Option<String>,
    pub f_amp: Option<f64>,
    // shared by case_study and price_impact.
    pub g_fun: Option<String>,
    pub g_amp: Option<f64>,
    // price_impact constants.
    pub gamma_fun: Option<String>,
    pub gamma_amp: Option<f64>,
    pub penalty_fun: Option<String>,
    pub penalty_amp: Option<f64>,
    // delay_toy constants.
    pub tau: Option<f64>,
    pub b_state: Option<f64>,
    pub b_mean: Option<f64>,
    pub f_state: Option<f64>,
    pub f_mean: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub k_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Default 3.
    pub basis_degree: Option<usize>,
    /// Default 1e-3.
    pub tol_picard: Option<f64>,
    /// Default 1e-8.
    pub tol_fp: Option<f64>,
    /// Default 25 (mean-field Picard) and 60 (best-response loop).
    pub max_iter: Option<usize>,
    /// Default: derived from the model's Lipschitz hint.
    pub beta: Option<f64>,
    /// Default 10.
    pub z_clip: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub n_values: Vec<usize>,
    /// Replicates for the control-law estimator; default 8.
    pub n_rep: Option<usize>,
    /// Moment order of the theory column; default 3.
    pub q_moment: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Default `out`.
    pub directory: Option<PathBuf>,
    /// Default false.
    pub emit_paths: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub numerics: NumericsBlock,
    pub sweep: Option<SweepBlock>,
    pub output: Option<OutputBlock>,
}

/// A parsed config together with the raw bytes it came from (echoed into
/// manifests) and the effective seed after any `--seed` override.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub raw: String,
    pub file_name: String,
    pub seed: u64,
}

impl Experiment {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&raw).map_err(|e| ConfigError(format!("{e}")))?;
        config.validate()?;
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let seed = seed_override.unwrap_or(config.numerics.seed);
        Ok(Experiment {
            config,
            raw,
            file_name,
            seed,
        })
    }

    pub fn grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::new(self.config.model.horizon, self.config.numerics.k_steps)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn model(&self) -> Result<Box<dyn GameModel>, ConfigError> {
        self.config.model.build()
    }

    pub fn basis(&self) -> RegressionBasis {
        let mut basis = RegressionBasis {
            degree: self.config.numerics.basis_degree.unwrap_or(3),
            ..RegressionBasis::default()
        };
        if self.config.model.tag == "delay_toy" {
            basis.lagged_state = true;
            basis.lag = self.config.model.tau.unwrap_or(0.0);
        }
        basis
    }

    pub fn mfg_options(&self) -> MfgSolverOptions {
        let n = &self.config.numerics;
        MfgSolverOptions {
            tol_picard: n.tol_picard.unwrap_or(1e-3),
            max_iter: n.max_iter.unwrap_or(25),
            beta: n.beta,
            z_clip: n.z_clip.unwrap_or(10.0),
            ..MfgSolverOptions::default()
        }
    }

    pub fn nplayer_options(&self) -> NPlayerOptions {
        let n = &self.config.numerics;
        NPlayerOptions {
            tol_fp: n.tol_fp.unwrap_or(1e-8),
            max_iter: n.max_iter.unwrap_or(60),
            z_clip: n.z_clip.unwrap_or(10.0),
            ..NPlayerOptions::default()
        }
    }

    pub fn sweep(&self) -> Result<&SweepBlock, ConfigError> {
        self.config
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError("missing section `sweep`".into()))
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(dir) = flag {
            return dir.to_path_buf();
        }
        self.config
            .output
            .as_ref()
            .and_then(|o| o.directory.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn emit_paths(&self) -> bool {
        self.config
            .output
            .as_ref()
            .and_then(|o| o.emit_paths)
            .unwrap_or(false)
    }

    /// Coupling-strength constant of the configured model, feeding the
    /// `N·R_N²` term of the theory column (`R_N` = coupling / N).
    pub fn coupling_strength(&self) -> f64 {
        let m = &self.config.model;
        match m.tag.as_str() {
            "case_study" => m.kappa2.unwrap_or(0.0).abs(),
            "price_impact" => m.gamma_amp.unwrap_or(0.0).abs(),
            "delay_toy" => m.b_mean.unwrap_or(0.0).abs(),
            _ => 0.0,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        for (name, value) in [
            ("numerics.tol_picard", n.tol_picard),
            ("numerics.tol_fp", n.tol_fp),
            ("numerics.z_clip", n.z_clip),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return err(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if let Some(beta) = n.beta {
            if !beta.is_finite() {
                return err("numerics.beta must be finite");
            }
        }
        if n.k_steps == 0 {
            return err("numerics.k_steps must be at least 1");
        }
        if n.n_paths == 0 {
            return err("numerics.n_paths must be at least 1");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.n_values.is_empty() {
                return err("sweep.n_values must not be empty");
            }
            let mut seen = std::collections::BTreeSet::new();
            for &v in &sweep.n_values {
                if v == 0 {
                    return err("sweep.n_values entries must be >= 1");
                }
                if !seen.insert(v) {
                    return err(format!("sweep.n_values entries must be distinct ({v} repeats)"));
                }
            }
            if let Some(q) = sweep.q_moment {
                if !(q > 2.0) {
                    return err("sweep.q_moment must exceed 2");
                }
            }
            if sweep.n_rep == Some(0) {
                return err("sweep.n_rep must be at least 1");
            }
        }
        self.model.check_common()
    }
}

fn parse_fn(name: &str, field: &str) -> Result<ScalarFn, ConfigError> {
    match name {
        "zero" => Ok(ScalarFn::Zero),
        "identity" => Ok(ScalarFn::Identity),
        "tanh" => Ok(ScalarFn::Tanh),
        "sin" => Ok(ScalarFn::Sin),
        "cos" => Ok(ScalarFn::Cos),
        "logistic" => Ok(ScalarFn::Logistic),
        other => err(format!(
            "{field}: unknown function `{other}` (expected zero|identity|tanh|sin|cos|logistic)"
        )),
    }
}

impl ModelBlock {
    fn check_common(&self) -> Result<(), ConfigError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return err("model.horizon must be positive");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return err("model.sigma must be positive");
        }
        if self.x0.is_empty() {
            return err("model.x0 must have at least one component");
        }
        if !(self.a_min < self.a_max) {
            return err("model.a_min must be strictly below model.a_max");
        }
        Ok(())
    }

    fn need(&self, field: &'static str, v: Option<f64>) -> Result<f64, ConfigError> {
        v.ok_or_else(|| ConfigError(format!("missing field `model.{field}` for tag `{}`", self.tag)))
    }

    fn need_fn(
        &self,
        field: &'static str,
        v: &Option<String>,
    ) -> Result<ScalarFn, ConfigError> {
        match v {
            Some(name) => parse_fn(name, field),
            None => err(format!(
                "missing field `model.{field}` for tag `{}`",
                self.tag
            )),
        }
    }

    pub fn build(&self) -> Result<Box<dyn GameModel>, ConfigError> {
        let actions = ActionSet::interval(self.a_min, self.a_max)
            .map_err(|e| ConfigError(e.to_string()))?;
        match self.tag.as_str() {
            "case_study" => {
                let model = CaseStudy::new(
                    actions,
                    self.x0.clone(),
                    self.sigma,
                    self.need("kappa1", self.kappa1)?,
                    self.need("kappa2", self.kappa2)?,
                    self.need("k_revert", self.k_revert)?,
                    self.need_fn("f_fun", &self.f_fun)?,
                    self.need("f_amp", self.f_amp)?,
                    self.need_fn("g_fun", &self.g_fun)?,
                    self.need("g_amp", self.g_amp)?,
                )
                .map_err(|e| ConfigError(e.to_string()))?;
                Ok(Box::new(model))
            }
            "price_impact" => {
                if self.x0.len() != 1 {
                    return err("model.x0 must be scalar for price_impact");
                }
                let model = PriceImpact::new(
                    actions,
                    self.x0[0],
                    self.sigma,
                    self.need_fn("gamma_fun", &self.gamma_fun)?,
                    self.need("gamma_amp", self.gamma_amp)?,
                    self.need_fn("penalty_fun", &self.penalty_fun)?,
                    self.need("penalty_amp", self.penalty_amp)?,
                    self.need_fn("g_fun", &self.g_fun)?,
                    self.need("g_amp", self.g_amp)?,
                )
                .map_err(|e| ConfigError(e.to_string()))?;
                Ok(Box::new(model))
            }
            "delay_toy" => {
                if self.x0.len() != 1 {
                    return err("model.x0 must be scalar for delay_toy");
                }
                let model = DelayToy::new(
                    actions,
                    self.x0[0],
                    self.sigma,
                    self.need("tau", self.tau)?,
                    self.need("b_state", self.b_state)?,
                    self.need("b_mean", self.b_mean)?,
                    self.need("f_state", self.f_state)?,
                    self.need("f_mean", self.f_mean)?,
                    self.need("g_amp", self.g_amp)?,
                )
                .map_err(|e| ConfigError(e.to_string()))?;
                Ok(Box::new(model))
            }
            other => err(format!(
                "model.tag `{other}` is not one of case_study|price_impact|delay_toy"
            )),
        }
    }
}
