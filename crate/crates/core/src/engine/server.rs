use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::fleet::Fleet;
use crate::lqr::Controller;
use crate::matops::Mat;

use super::{agent_gradient, EngineConfig, EventQueue, Evaluator, GradientReport, ReportAudit, RunOutput};

struct InFlight {
    report: GradientReport,
}

enum AgentState {
    Busy(InFlight),
    Idle,
}

struct Server<'a> {
    fleet: &'a Fleet,
    cfg: &'a EngineConfig,
    eval: Evaluator,
    k_bar: Controller,
    clock: f64,
    agents: Vec<AgentState>,
    next_seq: Vec<usize>,
    events: EventQueue,
    /// Received, not yet aggregated, in arrival order.
    pending: VecDeque<GradientReport>,
    seen: HashSet<(usize, usize)>,
    audit: ReportAudit,
}

impl<'a> Server<'a> {
    fn dispatch(&mut self, agent: usize) -> Result<()> {
        let seq = self.next_seq[agent];
        self.next_seq[agent] += 1;
        let grad = agent_gradient(
            &self.fleet.models[agent],
            &self.k_bar.k,
            &self.cfg.mode,
            &self.fleet.init,
            self.cfg.seed,
            agent,
            seq,
        )?;
        let ready_at = self.clock + self.cfg.delays.duration(agent, seq, self.cfg.seed);
        self.events.push(ready_at, agent);
        self.agents[agent] = AgentState::Busy(InFlight {
            report: GradientReport {
                agent_id: agent,
                seq,
                grad,
                based_on_stamp: self.k_bar.stamp,
                ready_at,
            },
        });
        self.audit.dispatched += 1;
        Ok(())
    }

    fn dispatch_idle(&mut self) -> Result<()> {
        for agent in 0..self.agents.len() {
            if matches!(self.agents[agent], AgentState::Idle) {
                self.dispatch(agent)?;
            }
        }
        Ok(())
    }

    /// Staleness a report with `stamp` would reach if aggregated after one more update.
    fn overdue_after_update(&self, stamp: usize) -> bool {
        match self.cfg.tau_cap {
            Some(cap) => self.k_bar.stamp + 1 - stamp > cap,
            None => false,
        }
    }

    /// Picks the next batch, or `None` when the update must wait.
    ///
    /// Reports that could not be aggregated later without exceeding the
    /// staleness cap are always taken; the rest is filled in arrival order.
    /// The update is deferred while an in-flight computation would exceed the
    /// cap once it lands.
    fn select_batch(&self) -> Option<Vec<usize>> {
        let b_s = self.cfg.batch_size;
        if self.pending.len() < b_s {
            return None;
        }
        let blocked = self.agents.iter().any(|a| match a {
            AgentState::Busy(f) => self.overdue_after_update(f.report.based_on_stamp),
            AgentState::Idle => false,
        });
        if blocked {
            return None;
        }
        let must = self
            .pending
            .iter()
            .filter(|r| self.overdue_after_update(r.based_on_stamp))
            .count();
        let mut free = b_s.saturating_sub(must);
        let mut picked = Vec::with_capacity(b_s.max(must));
        for (idx, r) in self.pending.iter().enumerate() {
            if self.overdue_after_update(r.based_on_stamp) {
                picked.push(idx);
            } else if free > 0 {
                picked.push(idx);
                free -= 1;
            }
        }
        Some(picked)
    }

    fn apply_update(&mut self, picked: &[usize]) -> Result<Vec<usize>> {
        let n = self.k_bar.stamp;
        let mut acc = Mat::zeros(self.k_bar.k.rows(), self.k_bar.k.cols());
        let mut staleness = Vec::with_capacity(picked.len());
        for &idx in picked {
            let r = &self.pending[idx];
            if !self.seen.insert((r.agent_id, r.seq)) {
                self.audit.duplicates += 1;
            }
            staleness.push(n - r.based_on_stamp);
            acc = acc + &r.grad;
        }
        // remove back to front so earlier indices stay valid
        for &idx in picked.iter().rev() {
            self.pending.remove(idx);
        }
        self.audit.aggregated += picked.len();
        let k_next = &self.k_bar.k - &acc.scale(self.cfg.eta / picked.len() as f64);
        self.k_bar = Controller::new(k_next, n + 1);
        Ok(staleness)
    }
}

/// Runs the asynchronous server for `cfg.iterations` updates starting from `k0`.
///
/// Returns `N + 1` records; record 0 describes `k0` at clock 0.
pub fn run_async(fleet: &Fleet, k0: &Controller, cfg: &EngineConfig) -> Result<RunOutput> {
    let m = fleet.len();
    cfg.validate(m)?;
    let eval = Evaluator::new(fleet)?;
    let mut records = vec![eval.record(fleet, &k0.k, 0, 0.0, Vec::new())?];

    let mut server = Server {
        fleet,
        cfg,
        eval,
        k_bar: Controller::new(k0.k.clone(), 0),
        clock: 0.0,
        agents: (0..m).map(|_| AgentState::Idle).collect(),
        next_seq: vec![0; m],
        events: EventQueue::new(),
        pending: VecDeque::new(),
        seen: HashSet::new(),
        audit: ReportAudit::default(),
    };
    server.dispatch_idle()?;

    while server.k_bar.stamp < cfg.iterations {
        let ev = server
            .events
            .pop()
            .ok_or_else(|| Error::DivergenceDetected {
                iteration: server.k_bar.stamp,
                reason: "event queue drained with no admissible update".into(),
            })?;
        server.clock = ev.time;
        let state = std::mem::replace(&mut server.agents[ev.agent], AgentState::Idle);
        let AgentState::Busy(flight) = state else {
            unreachable!("event for idle agent {}", ev.agent);
        };
        server.audit.completed += 1;
        server.pending.push_back(flight.report);

        while server.k_bar.stamp < cfg.iterations {
            let Some(picked) = server.select_batch() else {
                break;
            };
            let staleness = server.apply_update(&picked)?;
            let record = server
                .eval
                .record(fleet, &server.k_bar.k, server.k_bar.stamp, server.clock, staleness)?;
            records.push(record);
            if server.k_bar.stamp < cfg.iterations {
                server.dispatch_idle()?;
            }
        }
    }

    let mut audit = server.audit;
    audit.queued = server.pending.len();
    audit.in_flight = server.events.len();
    Ok(RunOutput {
        records,
        final_k: server.k_bar.k,
        audit,
    })
}
