//! Experiment configuration and the built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{DelayKind, DelayModel, EngineConfig, GradientMode};
use crate::error::{Error, Result};
use crate::fleet::HeterogeneityRadii;
use crate::lqr::{InitialStateSpec, PlantModel};
use crate::matops::Mat;
use crate::nominal;
use crate::zo::ZoConfig;

/// Fleet size of the desk presets.
pub const DESK_AGENTS: usize = 20;
/// Fleet size of the full-scale presets.
pub const FULL_AGENTS: usize = 100;
/// Desk presets shrink the reference radii by this factor so the
/// heterogeneity bias of a 20-system fleet sits below the 0.3 readout.
pub const DESK_RADIUS_SCALE: f64 = 0.05;

/// Smoothing radius of the zeroth-order estimator in every preset.
pub const ZO_RADIUS: f64 = 1e-3;
/// Redraws per sample enabled by `--zo-redraw`; presets abort by default.
pub const ZO_EXPLORATORY_REDRAWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Asynchronous vs synchronous under one straggler.
    Fig2,
    /// Varying staleness cap.
    Fig3a,
    /// Varying batch size.
    Fig3b,
    /// Varying heterogeneity radii.
    Fig3c,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Fig2, Preset::Fig3a, Preset::Fig3b, Preset::Fig3c, Preset::Custom];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3a => "fig3a",
            Preset::Fig3b => "fig3b",
            Preset::Fig3c => "fig3c",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Zo,
    ExactGrad,
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zo" => Ok(ModeKind::Zo),
            "exact-grad" => Ok(ModeKind::ExactGrad),
            _ => Err(Error::config("mode", format!("expected `zo` or `exact-grad`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduler {
    Async,
    Sync,
}

/// Where the nominal system comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NominalSource {
    /// The built-in 4-state plant and its initial gain.
    BuiltIn,
    /// JSON document with `a`, `b`, `q`, `r` and `k0` as lists of rows.
    Path(PathBuf),
}

#[derive(Deserialize)]
struct NominalFile {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    k0: Mat,
}

impl NominalSource {
    /// Nominal plant (id 0) and initial gain.
    pub fn load(&self) -> Result<(PlantModel, Mat)> {
        match self {
            NominalSource::BuiltIn => Ok((nominal::plant(), nominal::initial_gain())),
            NominalSource::Path(p) => {
                let text = std::fs::read_to_string(p)?;
                let f: NominalFile = serde_json::from_str(&text)?;
                let model = PlantModel::new(0, f.a, f.b, f.q, f.r)?;
                if f.k0.shape() != (model.n_u(), model.n_x()) {
                    return Err(Error::config("nominal", format!("k0 is {:?}", f.k0.shape())));
                }
                Ok((model, f.k0))
            }
        }
    }
}

/// Compute-time model; stragglers are the last `stragglers` agents so that
/// system 1 (the nominal one) is never slowed down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaySpec {
    pub kind: DelayKind,
    pub mean: f64,
    pub stragglers: usize,
    pub straggler_factor: f64,
}

impl DelaySpec {
    pub fn unit(kind: DelayKind) -> Self {
        DelaySpec {
            kind,
            mean: 1.0,
            stragglers: 0,
            straggler_factor: 1.0,
        }
    }

    pub fn model(&self, agents: usize) -> DelayModel {
        let ids = (agents.saturating_sub(self.stragglers)..agents).collect();
        DelayModel::uniform(self.kind, agents, self.mean).with_stragglers(ids, self.straggler_factor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// File stem of the run's artifacts.
    pub label: String,
    pub preset: Preset,
    pub nominal: NominalSource,
    pub radii: HeterogeneityRadii,
    /// Number of systems `M`.
    pub agents: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub zo_radius: f64,
    pub zo_samples: usize,
    pub zo_redraws: usize,
    pub tau_cap: Option<usize>,
    pub delays: DelaySpec,
    pub seed: u64,
    pub mode: ModeKind,
    pub scheduler: Scheduler,
    pub out_dir: PathBuf,
}

fn check(ok: bool, field: &str, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, msg))
    }
}

impl ExperimentConfig {
    /// Rejects out-of-range fields, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        check(
            !self.label.is_empty()
                && self.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'),
            "label",
            "must be non-empty and use only [A-Za-z0-9_-]",
        )?;
        check((1..=10_000).contains(&self.agents), "M", "must be in 1..=10000")?;
        check(
            self.eta.is_finite() && self.eta > 0.0 && self.eta <= 1.0,
            "eta",
            "must be in (0, 1]",
        )?;
        check(
            (1..=self.agents).contains(&self.batch_size),
            "b_s",
            format!("must be in 1..={}", self.agents),
        )?;
        check(
            (1..=100_000_000).contains(&self.iterations),
            "N",
            "must be in 1..=1e8",
        )?;
        check(
            self.zo_radius.is_finite() && self.zo_radius > 0.0 && self.zo_radius <= 1.0,
            "r",
            "must be in (0, 1]",
        )?;
        check((1..=100_000).contains(&self.zo_samples), "m", "must be in 1..=100000")?;
        check(self.tau_cap != Some(0), "tau_cap", "must be at least 1")?;
        check(
            self.delays.mean.is_finite() && self.delays.mean > 0.0,
            "delays.mean",
            "must be positive",
        )?;
        check(
            self.delays.stragglers < self.agents,
            "delays.stragglers",
            "must leave system 1 unslowed",
        )?;
        check(
            self.delays.straggler_factor.is_finite() && self.delays.straggler_factor >= 1.0,
            "delays.straggler_factor",
            "must be at least 1",
        )?;
        self.radii.validate()
    }

    pub fn gradient_mode(&self) -> GradientMode {
        match self.mode {
            ModeKind::ExactGrad => GradientMode::ExactGrad,
            ModeKind::Zo => GradientMode::Zo(ZoConfig {
                radius: self.zo_radius,
                samples: self.zo_samples,
                max_redraws: self.zo_redraws,
            }),
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            iterations: self.iterations,
            mode: self.gradient_mode(),
            delays: self.delays.model(self.agents),
            tau_cap: self.tau_cap,
            seed: self.seed,
        }
    }

    pub fn initial_state(&self, n_x: usize) -> InitialStateSpec {
        InitialStateSpec::identity(n_x)
    }

    pub fn trace_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.csv", self.label))
    }

    pub fn meta_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.json", self.label))
    }

    pub fn fleet_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.fleet.json", self.label))
    }
}

/// Command-line adjustments applied on top of a preset. `None` keeps the
/// preset value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<ModeKind>,
    pub agents: Option<usize>,
    pub batch_size: Option<usize>,
    /// Base step size; presets that scale η per run scale this value.
    pub eta: Option<f64>,
    /// Multiplies the preset's radii.
    pub radius_scale: Option<f64>,
    pub tau_cap: Option<usize>,
    pub zo_redraws: Option<usize>,
    pub iterations: Option<usize>,
    pub nominal: Option<NominalSource>,
    /// Full-size fleet (M = 100, unscaled reference radii).
    pub full_scale: bool,
}

struct Base {
    agents: usize,
    radii: HeterogeneityRadii,
}

/// Expands a preset into its runs. Runs of one preset share the seed, and
/// therefore the fleet whenever their radii agree.
pub fn preset_runs(preset: Preset, seed: u64, ov: &Overrides, out_dir: &Path) -> Result<Vec<ExperimentConfig>> {
    let reference = match preset {
        Preset::Fig3b => HeterogeneityRadii::LOW,
        _ => HeterogeneityRadii::REFERENCE,
    };
    let base = if ov.full_scale {
        Base {
            agents: FULL_AGENTS,
            radii: reference,
        }
    } else {
        Base {
            agents: DESK_AGENTS,
            radii: reference.scaled(DESK_RADIUS_SCALE),
        }
    };
    let agents = ov.agents.unwrap_or(base.agents);
    let radii = base.radii.scaled(ov.radius_scale.unwrap_or(1.0));
    // batch sizes are quoted for a desk fleet and grow with M
    let scale_bs = |b: usize| ((b * agents).div_ceil(DESK_AGENTS)).clamp(1, agents);

    let template = ExperimentConfig {
        label: preset.name().into(),
        preset,
        nominal: ov.nominal.clone().unwrap_or(NominalSource::BuiltIn),
        radii,
        agents,
        eta: 1e-5,
        batch_size: scale_bs(5),
        iterations: 5_000,
        zo_radius: ZO_RADIUS,
        zo_samples: nominal::ZO_SAMPLES,
        zo_redraws: ov.zo_redraws.unwrap_or(0),
        tau_cap: None,
        delays: DelaySpec::unit(DelayKind::Exponential),
        seed,
        mode: ModeKind::ExactGrad,
        scheduler: Scheduler::Async,
        out_dir: out_dir.to_path_buf(),
    };

    let mut runs = match preset {
        Preset::Fig2 => {
            let cfg = ExperimentConfig {
                eta: 1.2e-5,
                iterations: 9_000,
                tau_cap: Some(20),
                // simultaneous deterministic bursts produce stale batches that
                // destabilize ZO steps at this η; jittered delays do not
                delays: DelaySpec {
                    stragglers: 1,
                    straggler_factor: 20.0,
                    ..DelaySpec::unit(DelayKind::Exponential)
                },
                mode: ModeKind::Zo,
                ..template
            };
            let sync = ExperimentConfig {
                label: "sync".into(),
                scheduler: Scheduler::Sync,
                ..cfg.clone()
            };
            vec![ExperimentConfig { label: "async".into(), ..cfg }, sync]
        }
        Preset::Fig3a => {
            // larger staleness needs a smaller step: η = η₁ / √τ_max
            let eta1 = ov.eta.unwrap_or(1.2e-5);
            let caps = ov.tau_cap.map_or(vec![1, 3, 10], |c| vec![c]);
            caps.into_iter()
                .map(|cap| ExperimentConfig {
                    label: format!("tau_cap_{cap}"),
                    eta: eta1 / (cap as f64).sqrt(),
                    iterations: 95_000,
                    tau_cap: Some(cap),
                    ..template.clone()
                })
                .collect()
        }
        Preset::Fig3b => {
            // the admissible step grows with the batch: η = η₅ √(b_s / 5)
            let eta5 = ov.eta.unwrap_or(1e-5);
            let sizes = ov.batch_size.map_or(vec![scale_bs(5), scale_bs(10), scale_bs(20)], |b| vec![b]);
            let reference = scale_bs(5) as f64;
            sizes
                .into_iter()
                .map(|b| ExperimentConfig {
                    label: format!("bs_{b}"),
                    eta: eta5 * (b as f64 / reference).sqrt(),
                    batch_size: b,
                    iterations: 12_000,
                    tau_cap: Some(10),
                    ..template.clone()
                })
                .collect()
        }
        Preset::Fig3c => {
            let scales = [0u32, 1, 2];
            scales
                .into_iter()
                .map(|s| ExperimentConfig {
                    label: format!("radius_x{s}"),
                    radii: radii.scaled(s as f64),
                    eta: 3e-5,
                    batch_size: agents,
                    iterations: 45_000,
                    delays: DelaySpec::unit(DelayKind::Deterministic),
                    ..template.clone()
                })
                .collect()
        }
        Preset::Custom => vec![ExperimentConfig {
            label: "custom".into(),
            ..template
        }],
    };

    for cfg in &mut runs {
        if let Some(m) = ov.mode {
            cfg.mode = m;
        }
        if let Some(n) = ov.iterations {
            cfg.iterations = n;
        }
        match preset {
            Preset::Fig3a | Preset::Fig3b => {}
            _ => {
                if let Some(e) = ov.eta {
                    cfg.eta = e;
                }
            }
        }
        if preset != Preset::Fig3a {
            if let Some(c) = ov.tau_cap {
                cfg.tau_cap = Some(c);
            }
        }
        if preset != Preset::Fig3b && preset != Preset::Fig3c {
            if let Some(b) = ov.batch_size {
                cfg.batch_size = b;
            }
        }
        cfg.validate()?;
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runs(p: Preset, ov: &Overrides) -> Vec<ExperimentConfig> {
        preset_runs(p, 7, ov, Path::new("/tmp/x")).unwrap()
    }

    #[test]
    fn preset_shapes() {
        let ov = Overrides::default();
        let f2 = runs(Preset::Fig2, &ov);
        assert_eq!(f2.len(), 2);
        assert_eq!(f2[1].scheduler, Scheduler::Sync);
        assert_eq!(f2[0].delays.model(20).straggler_ids, vec![19]);
        let f3a = runs(Preset::Fig3a, &ov);
        assert_eq!(f3a.iter().map(|c| c.tau_cap).collect::<Vec<_>>(), vec![Some(1), Some(3), Some(10)]);
        assert!(f3a.windows(2).all(|w| w[0].eta > w[1].eta));
        let f3b = runs(Preset::Fig3b, &ov);
        assert_eq!(f3b.iter().map(|c| c.batch_size).collect::<Vec<_>>(), vec![5, 10, 20]);
        let f3c = runs(Preset::Fig3c, &ov);
        assert_eq!(f3c[0].radii, HeterogeneityRadii::ZERO);
        assert!(f3c.iter().all(|c| c.agents == DESK_AGENTS && c.batch_size == DESK_AGENTS));
    }

    #[test]
    fn full_scale_uses_reference_radii() {
        let ov = Overrides {
            full_scale: true,
            ..Default::default()
        };
        let f2 = runs(Preset::Fig2, &ov);
        assert_eq!(f2[0].agents, FULL_AGENTS);
        assert_eq!(f2[0].batch_size, 25);
        assert_eq!(f2[0].radii, HeterogeneityRadii::REFERENCE);
    }

    #[test]
    fn overrides_apply() {
        let ov = Overrides {
            mode: Some(ModeKind::Zo),
            agents: Some(1),
            batch_size: Some(1),
            radius_scale: Some(0.0),
            eta: Some(2e-5),
            ..Default::default()
        };
        let c = &runs(Preset::Custom, &ov)[0];
        assert_eq!((c.agents, c.batch_size, c.eta, c.mode), (1, 1, 2e-5, ModeKind::Zo));
        assert_eq!(c.radii, HeterogeneityRadii::ZERO);
    }

    #[test]
    fn field_level_errors() {
        let mut c = runs(Preset::Custom, &Overrides::default()).remove(0);
        c.batch_size = 50;
        match c.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "b_s"),
            other => panic!("{other:?}"),
        }
        c.batch_size = 5;
        c.eta = -1.0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { field, .. }) if field == "eta"));
        c.eta = 1e-5;
        c.label = "../x".into();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { field, .. }) if field == "label"));
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig4".parse::<Preset>().is_err());
    }

    #[test]
    fn nominal_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nom.json");
        let p = nominal::plant();
        let doc = serde_json::json!({"a": p.a, "b": p.b, "q": p.q, "r": p.r, "k0": nominal::initial_gain()});
        std::fs::write(&path, doc.to_string()).unwrap();
        let (m, k0) = NominalSource::Path(path).load().unwrap();
        assert_eq!(m, p);
        assert_eq!(k0, nominal::initial_gain());
    }
}
