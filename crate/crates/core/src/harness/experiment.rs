//! Runs experiments and writes their artifacts.
//!
//! Every run produces `<label>.csv` (the trace), `<label>.json` (metadata)
//! and `<label>.fleet.json` (the generated systems).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::trace_io::save_csv;
use crate::engine::{run_async, run_sync, staleness_stats, ReportAudit, StalenessSummary, TraceRecord};
use crate::error::{Error, Result};
use crate::fleet::{generate_fleet, Fleet};
use crate::lqr::Controller;
use crate::matops::Mat;

use super::config::{preset_runs, ExperimentConfig, Overrides, Preset, Scheduler};

pub const RUN_SCHEMA: &str = "asynclqr.run/1";
pub const TRACE_SCHEMA: &str = "asynclqr.trace/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema: String,
    pub trace_schema: String,
    pub config: ExperimentConfig,
    pub systems: usize,
    pub records: usize,
    pub staleness: StalenessSummary,
    pub audit: ReportAudit,
    pub final_gaps: Vec<f64>,
    pub final_k: Mat,
    pub trace_file: String,
    pub fleet_file: String,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub trace_path: PathBuf,
    pub meta_path: PathBuf,
    pub meta: RunMetadata,
    pub records: Vec<TraceRecord>,
}

/// Fleet and initial controller of a configuration.
pub fn build_fleet(cfg: &ExperimentConfig) -> Result<(Fleet, Controller)> {
    let (nominal, k0) = cfg.nominal.load()?;
    let init = cfg.initial_state(nominal.n_x());
    let fleet = generate_fleet(&nominal, &k0, cfg.radii, cfg.agents, cfg.seed, init)?;
    Ok((fleet, Controller::new(k0, 0)))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs one configuration and writes its artifacts into `cfg.out_dir`.
///
/// Engine failures (instability, divergence) are returned as errors and no
/// trace is written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let (fleet, k0) = build_fleet(cfg)?;
    let engine_cfg = cfg.engine_config();
    let out = match cfg.scheduler {
        Scheduler::Async => run_async(&fleet, &k0, &engine_cfg)?,
        Scheduler::Sync => run_sync(&fleet, &k0, &engine_cfg)?,
    };
    if !out.audit.is_consistent() {
        return Err(Error::Malformed(format!("report audit failed: {:?}", out.audit)));
    }

    let (trace_path, meta_path, fleet_path) = (cfg.trace_path(), cfg.meta_path(), cfg.fleet_path());
    save_csv(&trace_path, &out.records)?;
    fleet.save(&fleet_path)?;
    let meta = RunMetadata {
        schema: RUN_SCHEMA.into(),
        trace_schema: TRACE_SCHEMA.into(),
        config: cfg.clone(),
        systems: fleet.len(),
        records: out.records.len(),
        staleness: staleness_stats(&out.records),
        audit: out.audit.clone(),
        final_gaps: out.final_record().gaps.clone(),
        final_k: out.final_k.clone(),
        trace_file: file_name(&trace_path),
        fleet_file: file_name(&fleet_path),
    };
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(RunArtifacts {
        trace_path,
        meta_path,
        meta,
        records: out.records,
    })
}

/// Expands and runs every configuration of a preset, in order.
pub fn run_preset(preset: Preset, seed: u64, ov: &Overrides, out_dir: &Path) -> Result<Vec<RunArtifacts>> {
    preset_runs(preset, seed, ov, out_dir)?
        .iter()
        .map(run_experiment)
        .collect()
}

pub fn load_metadata(path: &Path) -> Result<RunMetadata> {
    let meta: RunMetadata = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if meta.schema != RUN_SCHEMA {
        return Err(Error::Malformed(format!("{}: schema `{}`", path.display(), meta.schema)));
    }
    Ok(meta)
}
