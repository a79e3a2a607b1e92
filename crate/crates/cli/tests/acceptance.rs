//! Acceptance suite: nine numbered criteria covering rate reproduction on
//! the case-study game, solver oracles, measure-change checks, transport
//! metric properties and bitwise determinism. Each criterion prints exactly
//! one `criterion N (<label>): PASS/FAIL` line; a FAIL also panics so the
//! harness reports it.
//!
//! Criteria 1, 2 and 7 share one full-scale convergence sweep (fixed budget
//! of 2·10⁴ scenarios, 50 time steps, N ∈ {4,…,64}) executed through the
//! compiled binary, so they also exercise the public command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use ndarray::{s, Array2};

use mfglab::{
    equilibrium_certificate, girsanov_weights, martingale_residual_check, rate_bound,
    reweighted_expectation, simulate_state_paths, solve_bsde_regression, solve_generalized_mkv,
    wasserstein2_1d, wasserstein2_exact_small, ActionSet, CaseStudy, ControlEnsemble,
    FeatureLayout, FlowInit, MeasureFlow, MfgSolverOptions, RegressionBasis, ScalarFn, TimeGrid,
};

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

fn check(num: usize, label: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num} ({label}): {verdict} — {detail}");
    assert!(pass, "criterion {num} ({label}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared full-scale sweep (criteria 1, 2, 7)
// ---------------------------------------------------------------------------

const SWEEP_SEED: u64 = 1;

struct SweepRow {
    n: u64,
    estimate: f64,
    se: f64,
}

struct Sweep {
    /// Per-quantity rows, in ascending N.
    gap: Vec<SweepRow>,
    w2: Vec<SweepRow>,
    /// Fitted log-log slopes and r² per quantity.
    fits: Vec<(String, f64, f64)>,
    /// `(N, zsum)` pairs in ascending N.
    zsum: Vec<(u64, f64)>,
}

fn sweep_config(out_dir: &Path) -> String {
    format!(
        r#"
[model]
tag = "case_study"
horizon = 1.0
sigma = 1.0
x0 = [0.3]
a_min = -1.0
a_max = 1.0
kappa1 = 1.0
kappa2 = 0.0
k_revert = 0.0
f_fun = "tanh"
f_amp = 1.0
g_fun = "zero"
g_amp = 0.0

[numerics]
k_steps = 50
n_paths = 20000
seed = {SWEEP_SEED}

[sweep]
n_values = [4, 8, 16, 32, 64]
n_rep = 8

[output]
directory = "{}"
"#,
        out_dir.display()
    )
}

fn run_converge(config: &Path, extra: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .arg("converge")
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .map_err(|e| format!("cannot spawn solver binary: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "converge exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn parse_sweep(dir: &Path) -> Result<Sweep, String> {
    let rates = fs::read_to_string(dir.join("rates.csv")).map_err(|e| e.to_string())?;
    let mut gap = Vec::new();
    let mut w2 = Vec::new();
    for line in rates.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let row = SweepRow {
            n: f[0].parse().map_err(|e| format!("bad N: {e}"))?,
            estimate: f[1].parse().map_err(|e| format!("bad estimate: {e}"))?,
            se: f[2].parse().map_err(|e| format!("bad se: {e}"))?,
        };
        match f[4] {
            "value_gap_sq" => gap.push(row),
            "control_w2_int" => w2.push(row),
            _ => {}
        }
    }
    let fits_text = fs::read_to_string(dir.join("fits.csv")).map_err(|e| e.to_string())?;
    let mut fits = Vec::new();
    for line in fits_text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        fits.push((
            f[0].to_string(),
            f[1].parse().map_err(|e| format!("bad slope: {e}"))?,
            f[3].parse().map_err(|e| format!("bad r2: {e}"))?,
        ));
    }
    let zsum_text = fs::read_to_string(dir.join("zsum.csv")).map_err(|e| e.to_string())?;
    let mut zsum = Vec::new();
    for line in zsum_text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        zsum.push((
            f[0].parse().map_err(|e| format!("bad N: {e}"))?,
            f[1].parse().map_err(|e| format!("bad zsum: {e}"))?,
        ));
    }
    if gap.len() != 5 || w2.len() != 5 || zsum.len() != 5 {
        return Err("sweep tables are incomplete".into());
    }
    Ok(Sweep { gap, w2, fits, zsum })
}

fn sweep() -> &'static Result<Sweep, String> {
    static SWEEP: OnceLock<Result<Sweep, String>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("mfglab-acceptance-{}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let out_dir = dir.join("sweep");
        let config = dir.join("sweep.toml");
        fs::write(&config, sweep_config(&out_dir)).map_err(|e| e.to_string())?;
        run_converge(&config, &[])?;
        parse_sweep(&out_dir)
    })
}

fn fit_of<'s>(sweep: &'s Sweep, quantity: &str) -> Option<&'s (String, f64, f64)> {
    sweep.fits.iter().find(|(q, _, _)| q == quantity)
}

#[test]
fn criterion_1_value_gap_rate() {
    let sweep = match sweep() {
        Ok(s) => s,
        Err(e) => return check(1, "value-gap rate", false, e),
    };
    let Some((_, slope, r2)) = fit_of(sweep, "value_gap_sq") else {
        return check(1, "value-gap rate", false, "no value_gap_sq fit");
    };
    let pass = *slope <= -0.7 && *r2 >= 0.8;
    check(
        1,
        "value-gap rate",
        pass,
        &format!("log-log slope {slope:.3} (≤ −0.7 required), r² {r2:.3} (≥ 0.8 required)"),
    );
}

#[test]
fn criterion_2_control_law_convergence() {
    let sweep = match sweep() {
        Ok(s) => s,
        Err(e) => return check(2, "control-law convergence", false, e),
    };
    let Some((_, slope, r2)) = fit_of(sweep, "control_w2_int") else {
        return check(2, "control-law convergence", false, "no control_w2_int fit");
    };
    let mut monotone = true;
    for pair in sweep.w2.windows(2) {
        let slack = 2.0 * pair[0].se.hypot(pair[1].se);
        if pair[1].estimate > pair[0].estimate + slack {
            monotone = false;
        }
    }
    let pass = monotone && *slope <= -0.4;
    check(
        2,
        "control-law convergence",
        pass,
        &format!(
            "nonincreasing up to 2·SE: {monotone}, log-log slope {slope:.3} (≤ −0.4 required), r² {r2:.3}"
        ),
    );
}

#[test]
fn criterion_7_z_sum_uniformity() {
    let sweep = match sweep() {
        Ok(s) => s,
        Err(e) => return check(7, "z-sum uniformity", false, e),
    };
    let max = sweep.zsum.iter().map(|&(_, z)| z).fold(f64::MIN, f64::max);
    let min = sweep.zsum.iter().map(|&(_, z)| z).fold(f64::MAX, f64::min);
    let ratio = max / min;
    let mut detail = format!("max/min ratio {ratio:.2} (≤ 2 required);");
    for &(n, z) in &sweep.zsum {
        let _ = write!(detail, " N={n}: {z:.4};");
    }
    // The diagnostic stays within the theoretical upper bound but is not
    // flat on this sweep: with zero terminal reward, no mean reversion and
    // no control coupling, every player's value depends on the others only
    // through the 1/N-weighted empirical mean, so all Z components — own
    // and cross — are O(1/N) and the summed diagnostic decays like 1/N
    // rather than levelling off. The ratio test below encodes the original
    // flatness expectation and is expected to fail; it is kept as an
    // honest record rather than weakened.
    check(7, "z-sum uniformity", ratio <= 2.0, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: empirical-measure rate on the 1-D Gaussian case
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_empirical_measure_rate() {
    // Frozen hand-computed branch values.
    let frozen = [
        (100, 1, 3.0, 0.315_443_469_003_188_4),
        (100, 4, 3.0, 0.676_955_520_687_314_3),
        (100, 8, 3.0, 0.531_671_235_020_026_3),
    ];
    for &(n, dim, q, want) in &frozen {
        let got = rate_bound(n, dim, q).unwrap();
        if (got - want).abs() > 1e-9 {
            return check(
                3,
                "empirical-measure rate",
                false,
                &format!("rate_bound({n},{dim},{q}) = {got}, expected {want}"),
            );
        }
    }

    // Zero-reward case study: the equilibrium control vanishes and the
    // state stays a driftless Brownian motion, so the time-t marginals are
    // exactly Gaussian.
    let model = CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).unwrap(),
        vec![0.0],
        1.0,
        0.0,
        0.0,
        0.0,
        ScalarFn::Tanh,
        0.0,
        ScalarFn::Zero,
        0.0,
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 25).unwrap();
    let basis = RegressionBasis::default();
    let opts = MfgSolverOptions::default();
    let solution = solve_generalized_mkv(&model, &grid, 2_000, 77, &basis, &opts).unwrap();

    let mut detail = String::new();
    let mut pass = true;
    for &n in &[8_usize, 16, 32, 64, 128, 256] {
        let reference = (10 * n).max(2_000);
        let gamma = mfglab::gamma_n_estimate(&model, &solution, n, 12, reference, 900 + n as u64)
            .unwrap();
        let bound = 10.0 * rate_bound(n, 1, 3.0).unwrap();
        if !(gamma.value <= bound) {
            pass = false;
        }
        let _ = write!(detail, "γ({n}) = {:.3} vs bound {:.3}; ", gamma.value, bound);
    }
    check(3, "empirical-measure rate", pass, detail.trim_end());
}

// ---------------------------------------------------------------------------
// Criterion 4: regression solver oracles
// ---------------------------------------------------------------------------

/// Driftless unit-volatility scalar model used to generate plain Brownian
/// ensembles for the solver oracles.
fn brownian_model(x0: f64) -> CaseStudy {
    CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).unwrap(),
        vec![x0],
        1.0,
        0.0,
        0.0,
        0.0,
        ScalarFn::Zero,
        0.0,
        ScalarFn::Zero,
        0.0,
    )
    .unwrap()
}

#[test]
fn criterion_4_bsde_oracles() {
    let basis = RegressionBasis {
        empirical_moments: false,
        ..RegressionBasis::default()
    };

    // Oracle 1: constant terminal, zero generator — exact constants.
    let grid = TimeGrid::new(1.0, 25).unwrap();
    let model = brownian_model(0.0);
    let paths = simulate_state_paths(&model, &grid, 10_000, &[0.0], 41).unwrap();
    let c = 0.7;
    let terminal = vec![c; 10_000];
    let sol = solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &basis, None).unwrap();
    let y_err = sol.y.iter().map(|y| (y - c).abs()).fold(0.0_f64, f64::max);
    let z_err = sol.z.iter().map(|z| z.abs()).fold(0.0_f64, f64::max);
    let resid1 = martingale_residual_check(&sol, &paths, |_, _, _| 0.0);
    if y_err > 1e-10 || z_err > 1e-10 || resid1 > 1e-12 {
        return check(
            4,
            "regression solver oracles",
            false,
            &format!("constant case: |Y−c| {y_err:.2e}, |Z| {z_err:.2e}, residual {resid1:.2e}"),
        );
    }

    // Oracle 2: zero terminal, unit generator — deterministic integration.
    let sol = solve_bsde_regression(&paths, &vec![0.0; 10_000], |_, _, _| 1.0, &basis, None)
        .unwrap();
    let horizon = 1.0;
    let mut y_err = 0.0_f64;
    for k in 0..=grid.steps() {
        let want = horizon - grid.time(k);
        for p in 0..paths.n_paths() {
            y_err = y_err.max((sol.y[[p, k]] - want).abs());
        }
    }
    let z_err = sol.z.iter().map(|z| z.abs()).fold(0.0_f64, f64::max);
    let resid2 = martingale_residual_check(&sol, &paths, |_, _, _| 1.0);
    if y_err > 1e-10 || z_err > 1e-10 || resid2 > 1e-12 {
        return check(
            4,
            "regression solver oracles",
            false,
            &format!(
                "deterministic case: |Y−(T−t)| {y_err:.2e}, |Z| {z_err:.2e}, residual {resid2:.2e}"
            ),
        );
    }

    // Oracle 3: linear terminal at M = 10⁵, K = 50 — martingale
    // representation gives Y_t = X_t and Z ≡ σ = 1.
    let m = 100_000;
    let x0 = 0.5;
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let model = brownian_model(x0);
    let paths = simulate_state_paths(&model, &grid, m, &[x0], 42).unwrap();
    let terminal: Vec<f64> = (0..m).map(|p| paths.states()[[p, grid.steps(), 0]]).collect();
    let sol = solve_bsde_regression(&paths, &terminal, |_, _, _| 0.0, &basis, None).unwrap();
    let y0_tol = (3.0 * sol.y0_se).max(0.05 * x0.abs());
    let y0_err = (sol.y0 - x0).abs();
    let mut z_mean_err = 0.0_f64;
    for k in 0..grid.steps() {
        let col = sol.z.slice(s![.., k, 0]);
        let mean = col.sum() / m as f64;
        z_mean_err = z_mean_err.max((mean - 1.0).abs());
    }
    let resid3 = martingale_residual_check(&sol, &paths, |_, _, _| 0.0);
    let clt = 5.0 / (m as f64).sqrt();
    let pass = y0_err <= y0_tol && z_mean_err <= 0.05 && resid3 <= clt;
    check(
        4,
        "regression solver oracles",
        pass,
        &format!(
            "exact cases ok; linear case: |Y0−X0| {y0_err:.2e} (tol {y0_tol:.2e}), \
             max |mean Z − 1| {z_mean_err:.3} (≤ 0.05), residual {resid3:.2e} (≤ {clt:.2e})"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: mean-field fixed point
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_mean_field_fixed_point() {
    // Coupled case study with zero control interaction: mean-field coupling
    // through the tanh statistic, mean reversion and a sloped terminal
    // reward give a genuinely iterative fixed point.
    let model = CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).unwrap(),
        vec![0.3],
        1.0,
        1.0,
        0.0,
        0.5,
        ScalarFn::Tanh,
        1.0,
        ScalarFn::Identity,
        0.5,
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let basis = RegressionBasis::default();
    let opts = MfgSolverOptions {
        tol_picard: 1e-3,
        max_iter: 25,
        ..MfgSolverOptions::default()
    };
    let sol = solve_generalized_mkv(&model, &grid, 10_000, 2024, &basis, &opts).unwrap();

    let iterations = sol.report.iterations.len();
    let converged = sol.report.converged && iterations <= 15;
    let mut contraction_ok = true;
    let mut worst_factor = 0.0_f64;
    for it in sol.report.iterations.iter().skip(1) {
        if let Some(factor) = it.contraction_factor {
            worst_factor = worst_factor.max(factor);
            if factor >= 1.0 {
                contraction_ok = false;
            }
        }
    }

    // Uniqueness: an independent start from a point-mass flow must land on
    // the same value within Monte-Carlo resolution.
    let opts_point = MfgSolverOptions {
        init: FlowInit::PointMass,
        ..opts.clone()
    };
    let alt = solve_generalized_mkv(&model, &grid, 10_000, 2024, &basis, &opts_point).unwrap();
    let diff = (sol.y0.value - alt.y0.value).abs();
    let diff_tol = 3.0 * sol.y0.se.hypot(alt.y0.se);
    let unique = diff <= diff_tol;

    // No unilateral deviation among 20 probes may beat the equilibrium by
    // more than its noise band.
    let cert = equilibrium_certificate(&model, &sol, 20, 555).unwrap();
    let cert_ok = cert.max_gain <= 3.0 * cert.max_gain_se;

    let pass = converged && contraction_ok && unique && cert_ok;
    check(
        5,
        "mean-field fixed point",
        pass,
        &format!(
            "converged in {iterations} iterations (≤ 15), worst contraction factor {worst_factor:.3} (< 1), \
             two-init gap {diff:.2e} (tol {diff_tol:.2e}), certificate max gain {:.2e} (≤ 3·SE {:.2e})",
            cert.max_gain,
            3.0 * cert.max_gain_se
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: measure-change suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_measure_change() {
    // Unit drift via the control channel: b = a − k·x with k = 0, a ≡ 1.
    let model = brownian_model(0.3);
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let m = 100_000;
    let paths = simulate_state_paths(&model, &grid, m, &[0.3], 606).unwrap();
    let controls = ControlEnsemble::constant(&grid, m, &[1.0]);
    let flow =
        MeasureFlow::point_mass(FeatureLayout::Current, &[0.3], &[0.0], grid.nodes()).unwrap();
    let weights = girsanov_weights(&model, &paths, &controls, &flow).unwrap();

    let terminal = weights.terminal_weights();
    let mean: f64 = terminal.iter().sum::<f64>() / m as f64;
    let var: f64 =
        terminal.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (m as f64 - 1.0);
    let se = (var / m as f64).sqrt();
    let mean_ok = (mean - 1.0).abs() <= 3.0 * se;
    let clip_ok = weights.clip_count() == 0;

    // Under the tilted measure the terminal mean shifts to x0 + σ·b·T.
    let xt: Vec<f64> = (0..m).map(|p| paths.states()[[p, grid.steps(), 0]]).collect();
    let shifted = reweighted_expectation(&xt, &terminal, false).unwrap();
    let want = 0.3 + 1.0;
    let shift_ok = (shifted.value - want).abs() <= 3.0 * shifted.se;

    let pass = mean_ok && clip_ok && shift_ok;
    check(
        6,
        "measure-change suite",
        pass,
        &format!(
            "mean terminal weight {mean:.4} ± {se:.4} (expect 1), clipped {} paths, \
             tilted mean {:.4} ± {:.4} (expect {want:.4})",
            weights.clip_count(),
            shifted.value,
            shifted.se
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: transport metric suite
// ---------------------------------------------------------------------------

/// SplitMix64 — deterministic test streams without pulling an RNG crate in.
struct Mix(u64);

impl Mix {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform on (−1, 1).
    fn sym(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn cloud(&mut self, rows: usize, cols: usize, scale: f64, shift: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.sym() * scale + shift)
    }
}

#[test]
fn criterion_8_transport_metrics() {
    let mut rng = Mix(0x8f1e_2d3c_4b5a_6978);

    // Metric axioms on 2-D clouds small enough for the exact assignment.
    for trial in 0..20 {
        let n = 2 + trial % 6;
        let a = rng.cloud(n, 2, 1.0, 0.0);
        let b = rng.cloud(n, 2, 1.3, 0.2);
        let c = rng.cloud(n, 2, 0.7, -0.4);
        let dab = wasserstein2_exact_small(a.view(), b.view()).unwrap();
        let dba = wasserstein2_exact_small(b.view(), a.view()).unwrap();
        if dab.to_bits() != dba.to_bits() {
            return check(8, "transport metric suite", false, "symmetry violated");
        }
        let daa = wasserstein2_exact_small(a.view(), a.view()).unwrap();
        if daa > 1e-12 {
            return check(8, "transport metric suite", false, "identity violated");
        }
        let dac = wasserstein2_exact_small(a.view(), c.view()).unwrap();
        let dcb = wasserstein2_exact_small(c.view(), b.view()).unwrap();
        if dab > dac + dcb + 1e-9 {
            return check(
                8,
                "transport metric suite",
                false,
                &format!("triangle violated: {dab} > {dac} + {dcb}"),
            );
        }
    }

    // 1-D sorted matching against the exact assignment on 50 clouds.
    let mut worst = 0.0_f64;
    for trial in 0..50 {
        let n = 2 + (trial * 7) % 30;
        let a = rng.cloud(n, 1, 1.0, 0.1);
        let b = rng.cloud(n, 1, 0.8, -0.2);
        let xs: Vec<f64> = a.column(0).to_vec();
        let ys: Vec<f64> = b.column(0).to_vec();
        let fast = wasserstein2_1d(&xs, None, &ys, None).unwrap();
        let exact = wasserstein2_exact_small(a.view(), b.view()).unwrap();
        worst = worst.max((fast - exact).abs());
    }
    check(
        8,
        "transport metric suite",
        worst <= 1e-10,
        &format!("axioms hold on 20 clouds; worst 1-D vs exact gap {worst:.2e} (≤ 1e-10)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism across thread counts
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_thread_determinism() {
    let dir = std::env::temp_dir().join(format!("mfglab-determinism-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let config_body = |out: &Path| {
        format!(
            r#"
[model]
tag = "case_study"
horizon = 1.0
sigma = 1.0
x0 = [0.3]
a_min = -1.0
a_max = 1.0
kappa1 = 0.8
kappa2 = 0.25
k_revert = 0.5
f_fun = "tanh"
f_amp = 1.0
g_fun = "identity"
g_amp = 0.5

[numerics]
k_steps = 10
n_paths = 1500
seed = 33

[sweep]
n_values = [2, 4]
n_rep = 2

[output]
directory = "{}"
"#,
            out.display()
        )
    };
    let runs: Vec<PathBuf> = [("one", "1"), ("eight", "8")]
        .iter()
        .map(|(name, threads)| {
            let out = dir.join(name);
            let config = dir.join(format!("{name}.toml"));
            fs::write(&config, config_body(&out)).unwrap();
            if let Err(e) = run_converge(&config, &["--threads", threads]) {
                check(9, "thread determinism", false, &e);
            }
            out
        })
        .collect();

    let mut detail = String::new();
    let mut pass = true;
    for file in ["rates.csv", "fits.csv", "zsum.csv"] {
        let a = fs::read(runs[0].join(file)).unwrap();
        let b = fs::read(runs[1].join(file)).unwrap();
        let same = a == b;
        if !same {
            pass = false;
        }
        let _ = write!(detail, "{file}: {}; ", if same { "identical" } else { "DIFFERS" });
    }
    check(9, "thread determinism", pass, detail.trim_end());
}
