use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fleet::Fleet;
use crate::lqr::{cost_and_gradient, optimum, LqrOptimum};
use crate::matops::Mat;

use super::{TraceRecord, DIVERGENCE_GAP};

/// Exact per-system metrics of a controller, with each system's optimum
/// computed once.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub optima: Vec<LqrOptimum>,
}

impl Evaluator {
    pub fn new(fleet: &Fleet) -> Result<Self> {
        let optima = fleet
            .models
            .par_iter()
            .map(|m| optimum(m, &fleet.init))
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator { optima })
    }

    /// Builds the trace row for `k`, failing with `DivergenceDetected` when
    /// `k` destabilizes a system or a gap exceeds the divergence threshold.
    pub fn record(&self, fleet: &Fleet, k: &Mat, n: usize, clock: f64, staleness: Vec<usize>) -> Result<TraceRecord> {
        let per_system = fleet
            .models
            .par_iter()
            .map(|m| cost_and_gradient(m, k, &fleet.init))
            .collect::<Vec<_>>();
        let mut gaps = Vec::with_capacity(per_system.len());
        let mut grad_sum = Mat::zeros(k.rows(), k.cols());
        for (i, res) in per_system.into_iter().enumerate() {
            let (cost, grad) = res.map_err(|_| Error::DivergenceDetected {
                iteration: n,
                reason: format!("controller destabilizes system {i}"),
            })?;
            let gap = cost - self.optima[i].cost;
            if gap.is_nan() || gap > DIVERGENCE_GAP {
                return Err(Error::DivergenceDetected {
                    iteration: n,
                    reason: format!("gap {gap:e} of system {i} exceeds {DIVERGENCE_GAP:e}"),
                });
            }
            gaps.push(gap);
            grad_sum = grad_sum + grad;
        }
        let avg = grad_sum.scale(1.0 / fleet.len() as f64);
        Ok(TraceRecord {
            n,
            clock,
            gaps,
            avg_grad_norm_sq: avg.frobenius_norm_sq(),
            staleness,
            all_stable: true,
        })
    }
}
