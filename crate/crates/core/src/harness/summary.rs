//! Trace summaries and the per-preset pass/fail verdicts.
//!
//! Verdicts depend only on trace contents and run metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::trace_io::{load_csv, TraceRow};
use crate::error::{Error, Result};

use super::config::{Preset, Scheduler};
use super::experiment::{load_metadata, RunArtifacts, RunMetadata, RUN_SCHEMA, TRACE_SCHEMA};

/// Gap readout used for iterations- and clock-to-threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.3;
/// Iterations averaged into the plateau gap.
pub const PLATEAU_WINDOW: usize = 100;
/// Zero-radii plateau must fall below this.
pub const HOMOGENEOUS_PLATEAU_TOL: f64 = 1e-6;
/// Largest relative spread of plateaus across staleness caps.
pub const PLATEAU_SPREAD_TOL: f64 = 0.10;
/// Async must reach the threshold within this fraction of the sync clock.
pub const ASYNC_CLOCK_RATIO: f64 = 0.5;

/// Readouts of one trace; all gaps refer to system 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub iterations_to_threshold: Option<usize>,
    pub clock_to_threshold: Option<f64>,
    pub plateau_gap: f64,
    pub final_gap: f64,
    pub max_staleness: usize,
    pub all_stable: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub preset: Preset,
    pub seed: u64,
    pub threshold: f64,
    pub traces: Vec<TraceSummary>,
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn trace(&self, label: &str) -> Option<&TraceSummary> {
        self.traces.iter().find(|t| t.label == label)
    }
}

/// Summary of one trace at the given gap threshold.
pub fn summarize_trace(label: &str, rows: &[TraceRow], threshold: f64) -> Result<TraceSummary> {
    let last = rows
        .last()
        .ok_or_else(|| Error::Malformed(format!("trace `{label}` is empty")))?;
    if last.gaps.is_empty() {
        return Err(Error::Malformed(format!("trace `{label}` has no systems")));
    }
    let hit = rows.iter().find(|r| r.gaps[0] <= threshold);
    let tail = &rows[rows.len().saturating_sub(PLATEAU_WINDOW)..];
    Ok(TraceSummary {
        label: label.into(),
        iterations_to_threshold: hit.map(|r| r.n),
        clock_to_threshold: hit.map(|r| r.clock),
        plateau_gap: tail.iter().map(|r| r.gaps[0]).sum::<f64>() / tail.len() as f64,
        final_gap: last.gaps[0],
        max_staleness: rows.iter().map(|r| r.max_staleness).max().unwrap_or(0),
        all_stable: rows.iter().all(|r| r.all_stable),
        iterations: last.n,
    })
}

fn verdict(criterion: &str, passed: bool, detail: String) -> Verdict {
    Verdict {
        criterion: criterion.into(),
        passed,
        detail,
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "never".into(), |x| x.to_string())
}

fn fmt_gaps(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Checks every run shares preset, seed, nominal source, system count and schemas.
fn check_compatible(runs: &[(RunMetadata, Vec<TraceRow>)]) -> Result<()> {
    let (first, _) = runs
        .first()
        .ok_or_else(|| Error::IncompatibleTraces("no traces to summarize".into()))?;
    for (m, rows) in runs {
        if m.schema != RUN_SCHEMA || m.trace_schema != TRACE_SCHEMA {
            return Err(Error::IncompatibleTraces(format!(
                "`{}` uses schema {}/{}",
                m.config.label, m.schema, m.trace_schema
            )));
        }
        let c = &m.config;
        let f = &first.config;
        if c.preset != f.preset || c.seed != f.seed || c.nominal != f.nominal || m.systems != first.systems {
            return Err(Error::IncompatibleTraces(format!(
                "`{}` ({}, seed {}, M={}) does not match `{}` ({}, seed {}, M={})",
                c.label, c.preset, c.seed, m.systems, f.label, f.preset, f.seed, first.systems
            )));
        }
        if rows.first().is_some_and(|r| r.gaps.len() != m.systems) {
            return Err(Error::IncompatibleTraces(format!("`{}` trace width differs from its metadata", c.label)));
        }
    }
    Ok(())
}

fn stability_verdict(summaries: &[TraceSummary]) -> Verdict {
    let bad: Vec<&str> = summaries.iter().filter(|s| !s.all_stable).map(|s| s.label.as_str()).collect();
    verdict(
        "per-iteration-stability",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} traces stabilizing at every iteration", summaries.len())
        } else {
            format!("unstable iterate in {bad:?}")
        },
    )
}

fn async_vs_sync(runs: &[(RunMetadata, TraceSummary)]) -> Verdict {
    let find = |s: Scheduler| runs.iter().find(|(m, _)| m.config.scheduler == s).map(|(_, t)| t);
    let (Some(a), Some(s)) = (find(Scheduler::Async), find(Scheduler::Sync)) else {
        return verdict("async-vs-sync", false, "needs one async and one sync trace".into());
    };
    let passed = matches!(
        (a.clock_to_threshold, s.clock_to_threshold),
        (Some(ca), Some(cs)) if ca <= ASYNC_CLOCK_RATIO * cs
    );
    verdict(
        "async-vs-sync",
        passed,
        format!(
            "clock to threshold: async {}, sync {}",
            fmt_opt(a.clock_to_threshold.map(|c| format!("{c:.1}"))),
            fmt_opt(s.clock_to_threshold.map(|c| format!("{c:.1}")))
        ),
    )
}

/// `Some` values that are ordered by `ok`; any `None` fails.
fn ordered(xs: &[Option<usize>], ok: impl Fn(usize, usize) -> bool) -> bool {
    xs.iter().all(Option::is_some) && xs.windows(2).all(|w| ok(w[0].unwrap(), w[1].unwrap()))
}

fn staleness_verdicts(mut runs: Vec<(RunMetadata, TraceSummary)>) -> Vec<Verdict> {
    runs.sort_by_key(|(m, _)| m.config.tau_cap.unwrap_or(usize::MAX));
    let caps: Vec<String> = runs.iter().map(|(m, _)| fmt_opt(m.config.tau_cap)).collect();
    let iters: Vec<Option<usize>> = runs.iter().map(|(_, t)| t.iterations_to_threshold).collect();
    let plateaus: Vec<f64> = runs.iter().map(|(_, t)| t.plateau_gap).collect();
    let lo = plateaus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plateaus.iter().copied().fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    vec![
        verdict(
            "staleness-slows",
            runs.len() >= 2 && ordered(&iters, |a, b| a <= b),
            format!("tau_cap {caps:?}: iterations to threshold {iters:?}"),
        ),
        verdict(
            "staleness-no-bias",
            runs.len() >= 2 && lo > 0.0 && spread <= PLATEAU_SPREAD_TOL,
            format!("plateaus {}, relative spread {spread:.3}", fmt_gaps(&plateaus)),
        ),
    ]
}

fn batch_verdict(mut runs: Vec<(RunMetadata, TraceSummary)>) -> Verdict {
    runs.sort_by_key(|(m, _)| m.config.batch_size);
    let sizes: Vec<usize> = runs.iter().map(|(m, _)| m.config.batch_size).collect();
    let iters: Vec<Option<usize>> = runs.iter().map(|(_, t)| t.iterations_to_threshold).collect();
    verdict(
        "batch-speedup",
        runs.len() >= 2 && ordered(&iters, |a, b| a >= b),
        format!("b_s {sizes:?}: iterations to threshold {iters:?}"),
    )
}

fn radius_total(m: &RunMetadata) -> f64 {
    let r = &m.config.radii;
    r.eps_a + r.eps_b + r.eps_q + r.eps_r
}

fn heterogeneity_verdict(mut runs: Vec<(RunMetadata, TraceSummary)>) -> Verdict {
    runs.sort_by(|a, b| radius_total(&a.0).total_cmp(&radius_total(&b.0)));
    let plateaus: Vec<f64> = runs.iter().map(|(_, t)| t.plateau_gap).collect();
    let zero_ok = runs
        .iter()
        .filter(|(m, _)| radius_total(m) == 0.0)
        .all(|(_, t)| t.plateau_gap <= HOMOGENEOUS_PLATEAU_TOL);
    let has_zero = runs.first().is_some_and(|(m, _)| radius_total(m) == 0.0);
    let increasing = plateaus.windows(2).all(|w| w[0] < w[1]);
    verdict(
        "heterogeneity-bias",
        runs.len() >= 2 && has_zero && zero_ok && increasing,
        format!("plateaus by growing radii {}", fmt_gaps(&plateaus)),
    )
}

/// Summarizes runs of one preset and evaluates the preset's criteria.
pub fn summarize(runs: &[(RunMetadata, Vec<TraceRow>)], threshold: f64) -> Result<Report> {
    check_compatible(runs)?;
    let summaries: Vec<(RunMetadata, TraceSummary)> = runs
        .iter()
        .map(|(m, rows)| Ok((m.clone(), summarize_trace(&m.config.label, rows, threshold)?)))
        .collect::<Result<_>>()?;
    let preset = summaries[0].0.config.preset;
    let traces: Vec<TraceSummary> = summaries.iter().map(|(_, t)| t.clone()).collect();

    let mut verdicts = vec![stability_verdict(&traces)];
    match preset {
        Preset::Fig2 => verdicts.push(async_vs_sync(&summaries)),
        Preset::Fig3a => verdicts.extend(staleness_verdicts(summaries.clone())),
        Preset::Fig3b => verdicts.push(batch_verdict(summaries.clone())),
        Preset::Fig3c => verdicts.push(heterogeneity_verdict(summaries.clone())),
        Preset::Custom => {}
    }
    Ok(Report {
        preset,
        seed: summaries[0].0.config.seed,
        threshold,
        traces,
        verdicts,
    })
}

/// Summarizes in-memory artifacts.
pub fn summarize_artifacts(runs: &[RunArtifacts], threshold: f64) -> Result<Report> {
    let pairs: Vec<(RunMetadata, Vec<TraceRow>)> = runs
        .iter()
        .map(|a| (a.meta.clone(), a.records.iter().map(TraceRow::from).collect()))
        .collect();
    summarize(&pairs, threshold)
}

/// Loads every run metadata file in `dir` together with its trace.
pub fn load_dir(dir: &Path) -> Result<Vec<(RunMetadata, Vec<TraceRow>)>> {
    let mut metas: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && !p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".fleet.json"))
                && p.file_name().is_some_and(|n| n != "report.json")
        })
        .collect();
    metas.sort();
    metas
        .iter()
        .map(|p| {
            let m = load_metadata(p)?;
            let rows = load_csv(&dir.join(&m.trace_file))?;
            Ok((m, rows))
        })
        .collect()
}

pub fn summarize_dir(dir: &Path, threshold: f64) -> Result<Report> {
    summarize(&load_dir(dir)?, threshold)
}
