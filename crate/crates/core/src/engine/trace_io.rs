//! Trace CSV I/O.
//!
//! Header: `n,clock,avg_grad_norm_sq,max_staleness,all_stable,gap_1,...,gap_M`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::TraceRecord;

pub const FIXED_COLUMNS: [&str; 5] = ["n", "clock", "avg_grad_norm_sq", "max_staleness", "all_stable"];

pub fn header(systems: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=systems).map(|i| format!("gap_{i}")))
        .collect()
}

pub fn write_csv<W: Write>(out: W, records: &[TraceRecord]) -> Result<()> {
    let systems = records.first().map_or(0, |r| r.gaps.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(systems))?;
    for r in records {
        if r.gaps.len() != systems {
            return Err(Error::Malformed(format!("row {} has {} gaps, expected {systems}", r.n, r.gaps.len())));
        }
        let mut row = vec![
            r.n.to_string(),
            format!("{:?}", r.clock),
            format!("{:?}", r.avg_grad_norm_sq),
            r.max_staleness().to_string(),
            r.all_stable.to_string(),
        ];
        row.extend(r.gaps.iter().map(|g| format!("{g:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_csv(File::create(path)?, records)
}

/// One parsed CSV row. Individual staleness values are not stored in the CSV,
/// only their maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    pub clock: f64,
    pub avg_grad_norm_sq: f64,
    pub max_staleness: usize,
    pub all_stable: bool,
    pub gaps: Vec<f64>,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        TraceRow {
            n: r.n,
            clock: r.clock,
            avg_grad_norm_sq: r.avg_grad_norm_sq,
            max_staleness: r.max_staleness(),
            all_stable: r.all_stable,
            gaps: r.gaps.clone(),
        }
    }
}

fn parse<T: std::str::FromStr>(field: &str, column: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Malformed(format!("line {line}: bad `{column}` value `{field}`")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let systems = head.len().saturating_sub(FIXED_COLUMNS.len());
    if head.len() <= FIXED_COLUMNS.len() || head != header(systems) {
        return Err(Error::Malformed(format!("unexpected trace header {head:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(TraceRow {
            n: parse(&rec[0], "n", line)?,
            clock: parse(&rec[1], "clock", line)?,
            avg_grad_norm_sq: parse(&rec[2], "avg_grad_norm_sq", line)?,
            max_staleness: parse(&rec[3], "max_staleness", line)?,
            all_stable: parse(&rec[4], "all_stable", line)?,
            gaps: (5..rec.len())
                .map(|j| parse(&rec[j], &head[j], line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

pub fn load_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(File::open(path)?)
}
