//! CSV tables. Every file starts with a schema-version comment line, then a
//! column header, then rows. Fields never contain commas or quotes, so the
//! format needs no escaping.

use std::fmt::Write as _;

use crate::env::OutcomeKind;

use super::{BenchError, MemoryRow, ResultRow, SuccessRow, TimingRow};

pub const RESULTS_SCHEMA: &str = "# nfil-results-v1";
pub const SUCCESS_SCHEMA: &str = "# nfil-success-v1";
pub const TIMING_SCHEMA: &str = "# nfil-timing-v1";
pub const MEMORY_SCHEMA: &str = "# nfil-memory-v1";

/// Footprint reported for the original hardware run, kept as an annotation
/// for context; never a pass/fail target.
pub const MEMORY_REFERENCE_NOTE: &str =
    "# reference footprint (original study hardware): dataset=8768 B, poe scheme=512 B";

pub fn write_results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(RESULTS_SCHEMA);
    out.push('\n');
    out.push_str("variant,trial,cycle,outcome,success,wall_time_s,state_bytes\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.9},{}",
            r.variant,
            r.trial,
            r.cycle,
            r.outcome.name(),
            r.success as u8,
            r.wall_time_s,
            r.state_bytes
        )
        .unwrap();
    }
    out
}

pub fn write_success_csv(rows: &[SuccessRow]) -> String {
    let mut out = String::new();
    out.push_str(SUCCESS_SCHEMA);
    out.push('\n');
    out.push_str("variant,cycle,success_rate\n");
    for r in rows {
        writeln!(out, "{},{},{:.6}", r.variant, r.cycle, r.success_rate).unwrap();
    }
    out
}

pub fn write_timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::new();
    out.push_str(TIMING_SCHEMA);
    out.push('\n');
    out.push_str("variant,cycle,mean_s,std_s,runs\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.9},{:.9},{}",
            r.variant, r.cycle, r.mean_s, r.std_s, r.runs
        )
        .unwrap();
    }
    out
}

pub fn write_memory_csv(rows: &[MemoryRow]) -> String {
    let mut out = String::new();
    out.push_str(MEMORY_SCHEMA);
    out.push('\n');
    out.push_str(MEMORY_REFERENCE_NOTE);
    out.push('\n');
    out.push_str("demos,dataset_bytes,poe_bytes\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.demos, r.dataset_bytes, r.poe_bytes).unwrap();
    }
    out
}

/// A parsed CSV table: schema line, column names, string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize, BenchError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| BenchError::MalformedTable(format!("missing column {name:?}")))
    }

    pub fn f64_cell(&self, row: &[String], col: usize) -> Result<f64, BenchError> {
        row[col]
            .parse::<f64>()
            .map_err(|e| BenchError::MalformedTable(format!("bad number {:?}: {e}", row[col])))
    }
}

/// Parse any of the harness CSV formats. Comment lines after the first are
/// skipped; the first line must be a schema marker.
pub fn read_table(text: &str) -> Result<Table, BenchError> {
    let mut lines = text.lines();
    let schema = lines
        .next()
        .filter(|l| l.starts_with("# nfil-"))
        .ok_or_else(|| BenchError::MalformedTable("missing schema line".into()))?
        .to_string();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        match &header {
            None => header = Some(cells),
            Some(cols) => {
                if cells.len() != cols.len() {
                    return Err(BenchError::MalformedTable(format!(
                        "row has {} cells, expected {}",
                        cells.len(),
                        cols.len()
                    )));
                }
                rows.push(cells);
            }
        }
    }
    let columns = header.ok_or_else(|| BenchError::MalformedTable("missing header".into()))?;
    Ok(Table {
        schema,
        columns,
        rows,
    })
}

/// Read a results CSV back into rows (used by the plot subcommand and tests).
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>, BenchError> {
    let table = read_table(text)?;
    if table.schema != RESULTS_SCHEMA {
        return Err(BenchError::MalformedTable(format!(
            "expected {RESULTS_SCHEMA}, got {}",
            table.schema
        )));
    }
    let variant = table.column("variant")?;
    let trial = table.column("trial")?;
    let cycle = table.column("cycle")?;
    let outcome = table.column("outcome")?;
    let success = table.column("success")?;
    let wall = table.column("wall_time_s")?;
    let bytes = table.column("state_bytes")?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        rows.push(ResultRow {
            variant: r[variant].clone(),
            trial: r[trial]
                .parse()
                .map_err(|e| BenchError::MalformedTable(format!("trial: {e}")))?,
            cycle: r[cycle]
                .parse()
                .map_err(|e| BenchError::MalformedTable(format!("cycle: {e}")))?,
            outcome: OutcomeKind::parse(&r[outcome]).map_err(BenchError::MalformedTable)?,
            success: r[success] == "1",
            wall_time_s: table.f64_cell(r, wall)?,
            state_bytes: r[bytes]
                .parse()
                .map_err(|e| BenchError::MalformedTable(format!("state_bytes: {e}")))?,
        });
    }
    Ok(rows)
}
