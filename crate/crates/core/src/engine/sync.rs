use rayon::prelude::*;

use crate::error::Result;
use crate::fleet::Fleet;
use crate::lqr::Controller;
use crate::matops::Mat;

use super::{agent_gradient, EngineConfig, Evaluator, ReportAudit, RunOutput};

/// Synchronous baseline: every iteration waits for all `M` reports computed
/// at the current controller, so the clock advances by the slowest agent.
///
/// `cfg.batch_size` and `cfg.tau_cap` are ignored. Agent `i`'s report at
/// iteration `n` uses the same substream as its `n`-th asynchronous report.
pub fn run_sync(fleet: &Fleet, k0: &Controller, cfg: &EngineConfig) -> Result<RunOutput> {
    let m = fleet.len();
    let cfg = EngineConfig {
        batch_size: m,
        tau_cap: None,
        ..cfg.clone()
    };
    cfg.validate(m)?;
    let eval = Evaluator::new(fleet)?;
    let mut records = vec![eval.record(fleet, &k0.k, 0, 0.0, Vec::new())?];
    let mut k = k0.k.clone();
    let mut clock = 0.0f64;
    let mut audit = ReportAudit::default();

    for n in 0..cfg.iterations {
        let grads = fleet
            .models
            .par_iter()
            .enumerate()
            .map(|(i, model)| agent_gradient(model, &k, &cfg.mode, &fleet.init, cfg.seed, i, n))
            .collect::<Result<Vec<_>>>()?;
        let round = (0..m)
            .map(|i| cfg.delays.duration(i, n, cfg.seed))
            .fold(0.0f64, f64::max);
        clock += round;

        let mut acc = Mat::zeros(k.rows(), k.cols());
        for g in &grads {
            acc = acc + g;
        }
        k = &k - &acc.scale(cfg.eta / m as f64);
        audit.dispatched += m;
        audit.completed += m;
        audit.aggregated += m;
        records.push(eval.record(fleet, &k, n + 1, clock, vec![0; m])?);
    }

    Ok(RunOutput {
        records,
        final_k: k,
        audit,
    })
}
