use serde::{Deserialize, Serialize};

use super::TraceRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StalenessSummary {
    pub max: usize,
    pub mean: f64,
    /// `histogram[τ]` counts aggregated reports with staleness `τ`.
    pub histogram: Vec<usize>,
    pub total_reports: usize,
}

pub fn staleness_stats(trace: &[TraceRecord]) -> StalenessSummary {
    let mut histogram = Vec::new();
    let mut total = 0usize;
    let mut sum = 0usize;
    for tau in trace.iter().flat_map(|r| r.staleness.iter().copied()) {
        if tau >= histogram.len() {
            histogram.resize(tau + 1, 0);
        }
        histogram[tau] += 1;
        total += 1;
        sum += tau;
    }
    StalenessSummary {
        max: histogram.len().saturating_sub(1),
        mean: if total == 0 { 0.0 } else { sum as f64 / total as f64 },
        histogram,
        total_reports: total,
    }
}
