//! Experiment harness: suite definitions, seeded runs, CSV tables, and SVG
//! charts. This is the library layer behind the CLI.

pub mod csv;
pub mod suite;
pub mod svg;

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::env::{OutcomeKind, TaskSpec};
use crate::feedback::{
    self, run_feedback, CycleRecord, FeedbackConfig, FeedbackError, Method,
};

/// Manual outcome overrides: trial index -> cycle index -> observed outcome.
/// This is the harness-level human-observer hook.
pub type TrialOverrides = HashMap<usize, HashMap<usize, OutcomeKind>>;

pub use csv::{
    read_table, write_memory_csv, write_results_csv, write_success_csv, write_timing_csv, Table,
    MEMORY_SCHEMA, RESULTS_SCHEMA, SUCCESS_SCHEMA, TIMING_SCHEMA,
};
pub use suite::ExperimentSuite;
pub use svg::{render_line_chart, LineChart, Series};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

/// One raw observation: a single cycle of a single trial of a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: String,
    pub trial: usize,
    pub cycle: usize,
    pub outcome: OutcomeKind,
    /// True if the trial has succeeded at or before this cycle.
    pub success: bool,
    pub wall_time_s: f64,
    pub state_bytes: usize,
}

/// Per-variant per-cycle success fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRow {
    pub variant: String,
    pub cycle: usize,
    pub success_rate: f64,
}

/// Per-variant per-cycle wall-time statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub variant: String,
    pub cycle: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRow {
    pub demos: usize,
    pub dataset_bytes: usize,
    pub poe_bytes: usize,
}

/// Everything a suite run produces.
#[derive(Debug, Default)]
pub struct SuiteResult {
    pub rows: Vec<ResultRow>,
    pub success: Vec<SuccessRow>,
    /// Variants that failed, with their error text; surviving variants'
    /// results are still present.
    pub failures: Vec<(String, String)>,
    pub histories: Vec<(String, Vec<Vec<CycleRecord>>)>,
}

/// Run every variant of the suite for `suite.trials` seeded trials each.
///
/// Output depends only on the suite definition and seed (wall-clock columns
/// aside). Trials run in parallel on the current rayon pool; aggregation is
/// keyed by (variant, trial, cycle) so scheduling cannot reorder results.
pub fn run_suite(suite: &ExperimentSuite) -> Result<SuiteResult, BenchError> {
    run_suite_with(suite, &TrialOverrides::new())
}

/// [`run_suite`] with manual outcome overrides applied to every variant.
pub fn run_suite_with(
    suite: &ExperimentSuite,
    overrides: &TrialOverrides,
) -> Result<SuiteResult, BenchError> {
    let mut result = SuiteResult::default();
    for (name, config) in &suite.variants {
        match run_variant_with(config, &suite.task, suite.trials, overrides) {
            Ok(histories) => {
                collect_rows(name, &histories, config.max_cycles, &mut result.rows);
                let curve = feedback::success_curve(&histories, config.max_cycles);
                for (cycle, rate) in curve.iter().enumerate() {
                    result.success.push(SuccessRow {
                        variant: name.clone(),
                        cycle,
                        success_rate: *rate,
                    });
                }
                result.histories.push((name.clone(), histories));
            }
            Err(e) => result.failures.push((name.clone(), e.to_string())),
        }
    }
    Ok(result)
}

fn run_variant_with(
    config: &FeedbackConfig,
    task: &TaskSpec,
    trials: usize,
    overrides: &TrialOverrides,
) -> Result<Vec<Vec<CycleRecord>>, FeedbackError> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut cfg = config.clone().with_seed(config.seed.wrapping_add(i as u64));
            if let Some(by_cycle) = overrides.get(&i) {
                cfg.overrides = by_cycle.clone();
            }
            run_feedback(&cfg, task)
        })
        .collect()
}

fn collect_rows(
    variant: &str,
    histories: &[Vec<CycleRecord>],
    max_cycles: usize,
    out: &mut Vec<ResultRow>,
) {
    for (trial, history) in histories.iter().enumerate() {
        let first_success = history
            .iter()
            .position(|r| r.outcome.is_success())
            .unwrap_or(usize::MAX);
        for cycle in 0..=max_cycles {
            // Histories stop early on success; carry the terminal record
            // forward so every (trial, cycle) pair has a row.
            let record = history.get(cycle).unwrap_or_else(|| {
                history.last().expect("history is never empty")
            });
            out.push(ResultRow {
                variant: variant.to_string(),
                trial,
                cycle,
                outcome: record.outcome.kind(),
                success: cycle >= first_success,
                wall_time_s: if cycle < history.len() {
                    record.wall_time_s
                } else {
                    0.0
                },
                state_bytes: record.state_bytes,
            });
        }
    }
}

/// Mean and population standard deviation of per-cycle wall times across runs.
pub fn timing_report(histories: &[(String, Vec<Vec<CycleRecord>>)]) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    for (variant, runs) in histories {
        let max_len = runs.iter().map(|h| h.len()).max().unwrap_or(0);
        for cycle in 0..max_len {
            let times: Vec<f64> = runs
                .iter()
                .filter_map(|h| h.get(cycle))
                .map(|r| r.wall_time_s)
                .collect();
            if times.is_empty() {
                continue;
            }
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
            rows.push(TimingRow {
                variant: variant.clone(),
                cycle,
                mean_s: mean,
                std_s: var.sqrt(),
                runs: times.len(),
            });
        }
    }
    rows
}

/// Serialized footprint comparison: the stored demonstration dataset versus
/// everything the product-of-experts scheme retains (policy grid + mask).
pub fn memory_report(
    config: &FeedbackConfig,
    task: &TaskSpec,
) -> Result<MemoryRow, BenchError> {
    let mut poe_cfg = config.clone();
    poe_cfg.method = Method::Poe;
    poe_cfg.max_cycles = 0;
    let poe_bytes = run_feedback(&poe_cfg, task)?[0].state_bytes;
    let mut data_cfg = config.clone();
    data_cfg.method = Method::NegWeight;
    data_cfg.max_cycles = 0;
    let dataset_bytes = run_feedback(&data_cfg, task)?[0].state_bytes;
    let behaviors = config
        .behaviors
        .as_ref()
        .map(|b| b.len())
        .unwrap_or_else(|| task.ambiguity());
    Ok(MemoryRow {
        demos: behaviors * config.demos_per_behavior,
        dataset_bytes,
        poe_bytes,
    })
}
