//! Verification suites: independent oracles, engine properties and the
//! desk-scale figure experiments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::engine::{run_async, run_sync, DelayKind, DelayModel, EngineConfig, GradientMode};
use crate::error::{Error, Result};
use crate::fleet::{generate_fleet, HeterogeneityRadii};
use crate::lqr::{
    analytic_gradient, check_sublevel, estimate_h_grad, lqr_cost, optimum, sample_ball, HGradSampling,
    InitialStateSpec, PlantModel, TheoryConstants,
};
use crate::matops::{dare_residual, solve_dare, solve_dlyap, spectral_radius_estimate, Mat};
use crate::nominal;
use crate::oracle::{finite_difference_gradient, truncated_lyapunov_series};
use crate::rng;
use crate::zo::{zo_estimate, ZoConfig};

use super::config::{Overrides, Preset};
use super::experiment::{run_preset, RunArtifacts};
use super::summary::{summarize_artifacts, Report, DEFAULT_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracles,
    Properties,
    Figures,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Oracles, Suite::Properties, Suite::Figures];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracles" => Ok(Suite::Oracles),
            "properties" => Ok(Suite::Properties),
            "figures" => Ok(Suite::Figures),
            _ => Err(Error::config("suite", format!("unknown suite `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: Option<f64>,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} ({:.1}s", self.name, self.seconds)?;
        if let Some(b) = self.budget_seconds {
            write!(f, " of {b:.0}s")?;
        }
        write!(f, "): {}", self.detail)
    }
}

/// Times `body`, which returns `(passed, detail)`; errors count as failures
/// and exceeding `budget` fails the criterion.
fn timed(name: &str, budget: Option<Duration>, body: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let t = Instant::now();
    let (mut passed, mut detail) = match body() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = t.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            passed = false;
            detail = format!("{detail}; over the {:.0}s budget", b.as_secs_f64());
        }
    }
    CriterionResult {
        name: name.into(),
        passed,
        detail,
        seconds: elapsed.as_secs_f64(),
        budget_seconds: budget.map(|b| b.as_secs_f64()),
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn normal_mat<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn rel_frobenius(actual: &Mat, expected: &Mat) -> f64 {
    (actual - expected).frobenius_norm() / expected.frobenius_norm().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- oracles

pub const LYAP_REL_TOL: f64 = 1e-8;
pub const DARE_RESIDUAL_TOL: f64 = 1e-9;
pub const OPTIMAL_GRAD_TOL: f64 = 1e-8;
pub const FD_REL_TOL: f64 = 1e-5;

/// Stein solver against the truncated series, Riccati residual and
/// stationarity of the Riccati gain on seeded 4×4 instances.
pub fn solver_oracles(seed: u64) -> CriterionResult {
    timed("solver-oracles", secs(10), || {
        let mut rng = rng::stream(seed, &[rng::domain::PROBE, 1]);
        let (mut lyap, mut dare, mut grad) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..100 {
            let raw = normal_mat(4, 4, 1.0, &mut rng);
            let target: f64 = rng.random_range(0.1..0.9);
            let f = raw.scale(target / spectral_radius_estimate(&raw));
            let g = normal_mat(4, 4, 1.0, &mut rng);
            let w = &g * &g.transpose() + Mat::scaled_identity(4, 0.1);
            let x = solve_dlyap(&f, &w)?.x;
            lyap = lyap.max(rel_frobenius(&x, &truncated_lyapunov_series(&f, &w, 1000)));

            let model = PlantModel::new(
                0,
                normal_mat(4, 4, 0.4, &mut rng),
                normal_mat(4, 2, 1.0, &mut rng),
                Mat::identity(4),
                Mat::identity(2),
            )?;
            let sol = solve_dare(&model.a, &model.b, &model.q, &model.r)?;
            dare = dare.max(dare_residual(&model.a, &model.b, &model.q, &model.r, &sol.p)?);
            let init = InitialStateSpec::identity(4);
            grad = grad.max(analytic_gradient(&model, &sol.k, &init)?.frobenius_norm());
        }
        Ok((
            lyap <= LYAP_REL_TOL && dare <= DARE_RESIDUAL_TOL && grad <= OPTIMAL_GRAD_TOL,
            format!("100 instances: Stein rel err {lyap:.2e}, Riccati residual {dare:.2e}, |grad J(K*)| {grad:.2e}"),
        ))
    })
}

/// Analytic gradient against central differences around the nominal `K0`.
pub fn gradient_oracle(seed: u64) -> CriterionResult {
    timed("gradient-oracle", secs(30), || {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k0 = nominal::initial_gain();
        let mut rng = rng::stream(seed, &[rng::domain::PROBE, 2]);
        let (mut worst, mut checked) = (0.0f64, 0);
        while checked < 50 {
            let k = &k0 + &sample_ball(2, 4, 0.05, &mut rng);
            let Ok(g) = analytic_gradient(&model, &k, &init) else {
                continue;
            };
            let fd = finite_difference_gradient(&model, &k, &init, 1e-6)?;
            worst = worst.max(rel_frobenius(&g, &fd));
            checked += 1;
        }
        Ok((worst <= FD_REL_TOL, format!("50 controllers: worst rel err {worst:.2e}")))
    })
}

fn scalar_benchmark() -> Result<(PlantModel, Mat, InitialStateSpec)> {
    let s = |v: f64| Mat::from_row_major(1, 1, &[v]);
    Ok((
        PlantModel::new(0, s(0.5)?, s(1.0)?, s(1.0)?, s(1.0)?)?,
        s(0.5)?,
        InitialStateSpec::identity(1),
    ))
}

/// Accuracy, bias decay and second moment of the two-point estimator.
pub fn zo_estimator(seed: u64) -> CriterionResult {
    timed("zo-estimator", secs(120), || {
        let (model, k, init) = scalar_benchmark()?;
        let g = analytic_gradient(&model, &k, &init)?.get(0, 0);
        let est = zo_estimate(&model, &k, &ZoConfig::new(1e-4, 2000), &init, seed)?.grad_hat.get(0, 0);
        let accurate = (est - g).abs() <= 0.02 * g.abs();

        // in one dimension every draw is ±r, so the estimate is its own mean
        let bias = |r: f64| -> Result<f64> {
            let e = zo_estimate(&model, &k, &ZoConfig::new(r, 8), &init, seed)?;
            Ok((e.grad_hat.get(0, 0) - g).abs())
        };
        let (b_r, b_half) = (bias(0.1)?, bias(0.05)?);
        let slope_ok = b_half <= 0.75 * b_r + 1e-12;

        let nom = nominal::plant();
        let init4 = InitialStateSpec::identity(4);
        let k0 = nominal::initial_gain();
        let r = 1e-3;
        let h = estimate_h_grad(&nom, &k0, &init4, &HGradSampling::default(), seed)?;
        let grad_sq = analytic_gradient(&nom, &k0, &init4)?.frobenius_norm_sq();
        let draws = 10_000u64;
        let mut second = 0.0;
        for l in 0..draws {
            let key = rng::derive_key(seed, &[rng::domain::PROBE, 3, l]);
            second += zo_estimate(&nom, &k0, &ZoConfig::new(r, 1), &init4, key)?
                .grad_hat
                .frobenius_norm_sq();
        }
        second /= draws as f64;
        let bound = crate::lqr::c_zo(4) * (h * h * r * r + grad_sq) * 1.1;
        Ok((
            accurate && slope_ok && second <= bound,
            format!(
                "scalar estimate {est:.5} vs {g:.5}; bias(r)={b_r:.3e}, bias(r/2)={b_half:.3e}; \
                 second moment {second:.3e} <= {bound:.3e}"
            ),
        ))
    })
}

/// `‖∇J(K)‖² ≥ λ (J(K) − J*)` on seeded controllers of the sublevel set.
pub fn gradient_dominance(seed: u64) -> CriterionResult {
    timed("gradient-dominance", secs(30), || {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k0 = nominal::initial_gain();
        let opt = optimum(&model, &init)?;
        let consts = TheoryConstants::compute(
            std::slice::from_ref(&model),
            std::slice::from_ref(&opt),
            &k0,
            &init,
            2.0,
            seed,
        )?;
        let lambda = consts.lambda_gd;
        let mut rng = rng::stream(seed, &[rng::domain::PROBE, 4]);
        let (mut checked, mut worst_ratio) = (0, f64::INFINITY);
        while checked < 100 {
            let t: f64 = rng.random_range(0.0..1.5);
            let k = &opt.k_star + &(&k0 - &opt.k_star).scale(t) + sample_ball(2, 4, 0.05, &mut rng);
            if !check_sublevel(&model, &k, &consts, &init) {
                continue;
            }
            let gap = lqr_cost(&model, &k, &init)? - opt.cost;
            let g2 = analytic_gradient(&model, &k, &init)?.frobenius_norm_sq();
            if gap > 0.0 {
                worst_ratio = worst_ratio.min(g2 / (lambda * gap));
            }
            checked += 1;
        }
        Ok((
            worst_ratio >= 1.0,
            format!("lambda {lambda:.4e}; min ‖∇J‖²/(λ gap) over 100 controllers {worst_ratio:.3}"),
        ))
    })
}

// ------------------------------------------------------------- properties

fn small_fleet_config(seed: u64, m: usize, batch: usize, mode: GradientMode) -> Result<(crate::fleet::Fleet, EngineConfig)> {
    let fleet = generate_fleet(
        &nominal::plant(),
        &nominal::initial_gain(),
        HeterogeneityRadii::REFERENCE.scaled(0.05),
        m,
        seed,
        InitialStateSpec::identity(4),
    )?;
    let cfg = EngineConfig {
        eta: 1e-5,
        batch_size: batch,
        iterations: 150,
        mode,
        delays: DelayModel::uniform(DelayKind::Deterministic, m, 1.0),
        tau_cap: None,
        seed,
    };
    Ok((fleet, cfg))
}

/// Reruns are bit-identical and a full-batch asynchronous run equals the
/// synchronous baseline iterate for iterate.
pub fn determinism(seed: u64) -> CriterionResult {
    timed("determinism", None, || {
        let dir_a = tempfile::tempdir()?;
        let dir_b = tempfile::tempdir()?;
        let ov = Overrides {
            iterations: Some(150),
            mode: Some(super::config::ModeKind::Zo),
            ..Default::default()
        };
        let mut identical = true;
        for preset in [Preset::Fig2, Preset::Fig3a] {
            let a = run_preset(preset, seed, &ov, dir_a.path())?;
            let b = run_preset(preset, seed, &ov, dir_b.path())?;
            for (x, y) in a.iter().zip(&b) {
                identical &= x.records == y.records
                    && x.meta.final_k == y.meta.final_k
                    && std::fs::read(&x.trace_path)? == std::fs::read(&y.trace_path)?;
            }
        }

        let zo = GradientMode::Zo(ZoConfig::new(1e-3, 20));
        let (fleet, cfg) = small_fleet_config(seed, 6, 6, zo)?;
        let k0 = nominal::initial_controller();
        let asy = run_async(&fleet, &k0, &cfg)?;
        let syn = run_sync(&fleet, &k0, &cfg)?;
        let same_bits = |x: &Mat, y: &Mat| x.row_major().iter().zip(y.row_major()).all(|(a, b)| a.to_bits() == b.to_bits());
        let equivalent = asy.records == syn.records && same_bits(&asy.final_k, &syn.final_k);
        Ok((
            identical && equivalent,
            format!("reruns bit-identical: {identical}; full-batch async equals sync: {equivalent}"),
        ))
    })
}

/// Staleness never exceeds the cap and every report is aggregated at most once.
pub fn report_accounting(seed: u64) -> CriterionResult {
    timed("report-accounting", None, || {
        let (fleet, mut cfg) = small_fleet_config(seed, 8, 3, GradientMode::ExactGrad)?;
        cfg.delays = DelayModel::uniform(DelayKind::Exponential, 8, 1.0).with_stragglers(vec![7], 10.0);
        let mut ok = true;
        let mut details = Vec::new();
        for cap in [1usize, 3, 10] {
            cfg.tau_cap = Some(cap);
            let out = run_async(&fleet, &nominal::initial_controller(), &cfg)?;
            let max = out.records.iter().map(|r| r.max_staleness()).max().unwrap_or(0);
            ok &= max <= cap && out.audit.is_consistent() && out.records.len() == cfg.iterations + 1;
            details.push(format!("cap {cap}: max staleness {max}"));
        }
        Ok((ok, details.join(", ")))
    })
}

// ---------------------------------------------------------------- figures

/// Outcome of one preset run inside the figures suite.
pub struct PresetOutcome {
    pub preset: Preset,
    pub report: Option<Report>,
    pub results: Vec<CriterionResult>,
}

fn figure(preset: Preset, seed: u64, work: &Path, budget: u64) -> PresetOutcome {
    let t = Instant::now();
    let runs: Result<Vec<RunArtifacts>> = run_preset(preset, seed, &Overrides::default(), &work.join(preset.name()));
    let elapsed = t.elapsed();
    let over = elapsed > Duration::from_secs(budget);
    let finish = |name: String, passed: bool, detail: String| CriterionResult {
        name,
        passed: passed && !over,
        detail: if over {
            format!("{detail}; over the {budget}s budget")
        } else {
            detail
        },
        seconds: elapsed.as_secs_f64(),
        budget_seconds: Some(budget as f64),
    };
    let label = |c: &str| format!("{preset}/{c}");
    match runs.and_then(|r| summarize_artifacts(&r, DEFAULT_THRESHOLD)) {
        Ok(report) => {
            let results = report
                .verdicts
                .iter()
                .map(|v| finish(label(&v.criterion), v.passed, v.detail.clone()))
                .collect();
            PresetOutcome {
                preset,
                report: Some(report),
                results,
            }
        }
        Err(e) => PresetOutcome {
            preset,
            report: None,
            results: vec![finish(label("run"), false, format!("error: {e}"))],
        },
    }
}

/// Runs the four desk presets and evaluates their criteria. Artifacts are
/// kept under `work`.
pub fn figures(seed: u64, work: &Path) -> Vec<PresetOutcome> {
    [(Preset::Fig3c, 150), (Preset::Fig3a, 300), (Preset::Fig3b, 300), (Preset::Fig2, 300)]
        .into_iter()
        .map(|(p, budget)| figure(p, seed, work, budget))
        .collect()
}

/// Runs one suite. Figure artifacts go to `work` when given, otherwise to a
/// temporary directory that is removed afterwards.
pub fn run_suite(suite: Suite, seed: u64, work: Option<&Path>) -> Result<Vec<CriterionResult>> {
    Ok(match suite {
        Suite::Oracles => vec![
            solver_oracles(seed),
            gradient_oracle(seed),
            zo_estimator(seed),
            gradient_dominance(seed),
        ],
        Suite::Properties => vec![determinism(seed), report_accounting(seed)],
        Suite::Figures => {
            let tmp;
            let dir = match work {
                Some(d) => d,
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path()
                }
            };
            figures(seed, dir).into_iter().flat_map(|o| o.results).collect()
        }
    })
}
