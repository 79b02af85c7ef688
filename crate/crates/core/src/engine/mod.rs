//! Virtual-time simulation of the asynchronous policy-gradient server and
//! its synchronous baseline.
//!
//! Agents compute gradient estimates at the controller they last received;
//! each computation takes a modeled virtual duration. The server aggregates
//! the first `b_s` reports to arrive, applies
//! `K̄_{n+1} = K̄_n − (η/b_s) Σ ∇̂J⁽ˢ⁾(K̄_{n−τ_s(n)})`, and rebroadcasts only to
//! agents that are idle. Every random draw comes from a per-(agent, report)
//! substream, so a trace is a pure function of its inputs.

mod eval;
mod events;
mod server;
mod stats;
mod sync;
pub mod trace_io;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{analytic_gradient, PlantModel};
use crate::matops::Mat;
use crate::rng;
use crate::zo::{zo_estimate, ZoConfig};

pub use eval::Evaluator;
pub use events::{Event, EventQueue};
pub use server::run_async;
pub use stats::{staleness_stats, StalenessSummary};
pub use sync::run_sync;

/// Per-system gap above which a run is declared divergent.
pub const DIVERGENCE_GAP: f64 = 1e6;

/// How agents obtain gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GradientMode {
    /// Two-point zeroth-order estimation.
    Zo(ZoConfig),
    /// Exact analytic gradients; isolates staleness and heterogeneity from estimation noise.
    ExactGrad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayKind {
    Deterministic,
    /// Exponential with mean equal to the agent's scale.
    Exponential,
}

/// Virtual compute time of one gradient report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub per_agent_scale: Vec<f64>,
    pub straggler_ids: Vec<usize>,
    pub straggler_factor: f64,
}

impl DelayModel {
    pub fn uniform(kind: DelayKind, agents: usize, scale: f64) -> Self {
        DelayModel {
            kind,
            per_agent_scale: vec![scale; agents],
            straggler_ids: Vec::new(),
            straggler_factor: 1.0,
        }
    }

    pub fn deterministic(scales: Vec<f64>) -> Self {
        DelayModel {
            kind: DelayKind::Deterministic,
            per_agent_scale: scales,
            straggler_ids: Vec::new(),
            straggler_factor: 1.0,
        }
    }

    pub fn with_stragglers(mut self, ids: Vec<usize>, factor: f64) -> Self {
        self.straggler_ids = ids;
        self.straggler_factor = factor;
        self
    }

    pub fn agents(&self) -> usize {
        self.per_agent_scale.len()
    }

    pub fn validate(&self, agents: usize) -> Result<()> {
        if self.per_agent_scale.len() != agents {
            return Err(Error::config(
                "delays",
                format!("{} scales for {agents} agents", self.per_agent_scale.len()),
            ));
        }
        if self.per_agent_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("delays", "scales must be positive"));
        }
        if !(self.straggler_factor >= 1.0 && self.straggler_factor.is_finite()) {
            return Err(Error::config("straggler_factor", "must be at least 1"));
        }
        if let Some(id) = self.straggler_ids.iter().find(|&&id| id >= agents) {
            return Err(Error::config("straggler_ids", format!("agent {id} out of range")));
        }
        Ok(())
    }

    fn mean_duration(&self, agent: usize) -> f64 {
        let base = self.per_agent_scale[agent];
        if self.straggler_ids.contains(&agent) {
            base * self.straggler_factor
        } else {
            base
        }
    }

    /// Duration of `agent`'s `report`-th computation.
    pub fn duration(&self, agent: usize, report: usize, seed: u64) -> f64 {
        let mean = self.mean_duration(agent);
        match self.kind {
            DelayKind::Deterministic => mean,
            DelayKind::Exponential => {
                let mut s = rng::stream(seed, &[rng::domain::DELAY, agent as u64, report as u64]);
                mean * s.sample::<f64, _>(Exp1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub mode: GradientMode,
    pub delays: DelayModel,
    pub tau_cap: Option<usize>,
    pub seed: u64,
}

impl EngineConfig {
    pub fn validate(&self, agents: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "step size must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > agents {
            return Err(Error::config("b_s", format!("must be in 1..={agents}")));
        }
        if let GradientMode::Zo(zo) = &self.mode {
            zo.validate()?;
        }
        self.delays.validate(agents)
    }
}

/// One agent's finished gradient computation.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub agent_id: usize,
    /// Per-agent report counter.
    pub seq: usize,
    pub grad: Mat,
    pub based_on_stamp: usize,
    pub ready_at: f64,
}

/// Metrics after iteration `n` (row `n = 0` is the initial controller).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    pub clock: f64,
    /// `J⁽ⁱ⁾(K̄_n) − J⁽ⁱ⁾(K*_i)` for every system.
    pub gaps: Vec<f64>,
    /// `‖∇J̄(K̄_n)‖²_F` of the fleet-average cost.
    pub avg_grad_norm_sq: f64,
    /// `τ_s(n)` of every report aggregated into this update.
    pub staleness: Vec<usize>,
    pub all_stable: bool,
}

impl TraceRecord {
    pub fn max_staleness(&self) -> usize {
        self.staleness.iter().copied().max().unwrap_or(0)
    }
}

/// Bookkeeping proving every report is aggregated at most once and none is lost.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportAudit {
    pub dispatched: usize,
    pub completed: usize,
    pub aggregated: usize,
    /// Completed but not yet aggregated when the run stopped.
    pub queued: usize,
    /// Still computing when the run stopped.
    pub in_flight: usize,
    pub duplicates: usize,
}

impl ReportAudit {
    pub fn is_consistent(&self) -> bool {
        self.duplicates == 0
            && self.completed == self.aggregated + self.queued
            && self.dispatched == self.completed + self.in_flight
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub final_k: Mat,
    pub audit: ReportAudit,
}

impl RunOutput {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("trace always holds the initial record")
    }
}

/// Gradient of `model` at `k` for the given (agent, report) substream.
pub(crate) fn agent_gradient(
    model: &PlantModel,
    k: &Mat,
    mode: &GradientMode,
    init: &crate::lqr::InitialStateSpec,
    seed: u64,
    agent: usize,
    report: usize,
) -> Result<Mat> {
    match mode {
        GradientMode::ExactGrad => analytic_gradient(model, k, init),
        GradientMode::Zo(cfg) => {
            let key = rng::derive_key(seed, &[rng::domain::ZO, agent as u64, report as u64]);
            zo_estimate(model, k, cfg, init, key).map(|e| e.grad_hat)
        }
    }
}
