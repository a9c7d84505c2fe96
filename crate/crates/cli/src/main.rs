//! `nfil` — benchmark harness CLI.
//!
//! Subcommands mirror the experiment matrix: `run` (success-rate suites),
//! `timing` (per-cycle wall-time study), `memory` (footprint accounting),
//! and `plot` (CSV to SVG charts).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nfil_core::bench::{
    self, csv, memory_report, run_suite_with, suite::ExperimentSuite, svg, timing_report,
    MemoryRow, TrialOverrides,
};
use nfil_core::env::OutcomeKind;
use nfil_core::feedback::FeedbackConfig;

#[derive(Parser)]
#[command(name = "nfil", version, about = "Negative-feedback imitation learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment suite; writes results.csv and success.csv.
    Run {
        /// Suite definition (TOML).
        #[arg(long)]
        suite: PathBuf,
        /// Output directory (default: $NFIL_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Override the suite's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Manual outcome overrides: lines of `<trial> <cycle> <outcome>`.
        #[arg(long)]
        outcome_override: Option<PathBuf>,
        /// Also write every cycle's policy grid under out/snapshots/.
        #[arg(long)]
        snapshots: bool,
    },
    /// Per-cycle wall-time study; forces full-length runs, writes timing.csv.
    Timing {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (timing defaults to serial for clean measurements).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dataset vs product-of-experts footprint; writes memory.csv.
    Memory {
        /// Task name: simple | slalom | slalom25 | pickplace3d.
        #[arg(long, default_value = "simple")]
        task: String,
        /// Comma-separated demos-per-behavior counts to sweep.
        #[arg(long, default_value = "1,2,4")]
        demos: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render an SVG chart from a harness CSV (schema is auto-detected).
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chart title (defaults to the CSV file stem).
        #[arg(long)]
        title: Option<String>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("NFIL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

fn load_overrides(path: &Path) -> Result<TrialOverrides> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading overrides {}", path.display()))?;
    let mut map: TrialOverrides = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            bail!("overrides line {}: expected `<trial> <cycle> <outcome>`", lineno + 1);
        }
        let trial: usize = fields[0].parse().context("trial index")?;
        let cycle: usize = fields[1].parse().context("cycle index")?;
        let kind = OutcomeKind::parse(fields[2]).map_err(anyhow::Error::msg)?;
        map.entry(trial).or_default().insert(cycle, kind);
    }
    Ok(map)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            suite,
            out,
            workers,
            seed,
            outcome_override,
            snapshots,
        } => cmd_run(&suite, out, workers, seed, outcome_override, snapshots),
        Cmd::Timing {
            suite,
            out,
            workers,
            seed,
        } => cmd_timing(&suite, out, workers, seed),
        Cmd::Memory {
            task,
            demos,
            out,
            seed,
        } => cmd_memory(&task, &demos, out, seed),
        Cmd::Plot { csv, out, title } => cmd_plot(&csv, out, title),
    }
}

fn cmd_run(
    suite_path: &Path,
    out: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
    outcome_override: Option<PathBuf>,
    snapshots: bool,
) -> Result<()> {
    let mut suite = ExperimentSuite::load(suite_path)
        .with_context(|| format!("loading suite {}", suite_path.display()))?;
    if let Some(seed) = seed {
        for (_, cfg) in &mut suite.variants {
            cfg.seed = seed;
        }
    }
    let overrides = match outcome_override {
        Some(path) => load_overrides(&path)?,
        None => TrialOverrides::new(),
    };
    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    let result = with_pool(workers, || run_suite_with(&suite, &overrides))?;

    fs::write(dir.join("results.csv"), csv::write_results_csv(&result.rows))?;
    fs::write(dir.join("success.csv"), csv::write_success_csv(&result.success))?;
    if snapshots {
        let snap = dir.join("snapshots");
        for (variant, histories) in &result.histories {
            let vdir = snap.join(variant);
            fs::create_dir_all(&vdir)?;
            for (trial, history) in histories.iter().enumerate() {
                for record in history {
                    let name = format!("trial{trial:03}_cycle{:02}.grid", record.cycle);
                    fs::write(vdir.join(name), record.policy.to_bytes())?;
                }
            }
        }
    }

    println!("suite {} ({} trials per variant)", suite.name, suite.trials);
    for (variant, _) in &suite.variants {
        let final_rate = result
            .success
            .iter()
            .rfind(|r| &r.variant == variant)
            .map(|r| r.success_rate)
            .unwrap_or(f64::NAN);
        println!("  {variant}: final success rate {final_rate:.3}");
    }
    println!("wrote {}", dir.join("results.csv").display());
    println!("wrote {}", dir.join("success.csv").display());

    if !result.failures.is_empty() {
        for (variant, err) in &result.failures {
            eprintln!("variant {variant} failed: {err}");
        }
        std::process::exit(1);
    }
    Ok(())
}

fn cmd_timing(
    suite_path: &Path,
    out: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
) -> Result<()> {
    let mut suite = ExperimentSuite::load(suite_path)?;
    for (_, cfg) in &mut suite.variants {
        cfg.force_cycles = true;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
    }
    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    let result = with_pool(workers, || bench::run_suite(&suite))?;
    if !result.failures.is_empty() {
        for (variant, err) in &result.failures {
            eprintln!("variant {variant} failed: {err}");
        }
        std::process::exit(1);
    }
    let rows = timing_report(&result.histories);
    fs::write(dir.join("timing.csv"), csv::write_timing_csv(&rows))?;
    for r in &rows {
        println!(
            "{:<20} cycle {}  mean {:.6}s  std {:.6}s  ({} runs)",
            r.variant, r.cycle, r.mean_s, r.std_s, r.runs
        );
    }
    println!("wrote {}", dir.join("timing.csv").display());
    Ok(())
}

fn cmd_memory(task_name: &str, demos: &str, out: Option<PathBuf>, seed: u64) -> Result<()> {
    let task = match task_name {
        "simple" => nfil_core::env::make_simple_task(),
        "slalom" => nfil_core::env::make_slalom_task(),
        "slalom25" => nfil_core::env::make_slalom_task_with(5).unwrap(),
        "pickplace3d" => nfil_core::env::make_pickplace3d_task(),
        other => bail!("unknown task {other:?}"),
    };
    let counts: Vec<usize> = demos
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("demo count"))
        .collect::<Result<_>>()?;
    let mut rows: Vec<MemoryRow> = Vec::new();
    for n in counts {
        let mut cfg = FeedbackConfig::new(&task);
        cfg.seed = seed;
        cfg.demos_per_behavior = n;
        if cfg.pool_size < n {
            cfg.pool_size = n;
        }
        rows.push(memory_report(&cfg, &task)?);
    }
    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("memory.csv"), csv::write_memory_csv(&rows))?;
    for r in &rows {
        println!(
            "{} demos: dataset {} B, poe scheme {} B",
            r.demos, r.dataset_bytes, r.poe_bytes
        );
    }
    println!("wrote {}", dir.join("memory.csv").display());
    Ok(())
}

fn cmd_plot(csv_path: &Path, out: Option<PathBuf>, title: Option<String>) -> Result<()> {
    let text = fs::read_to_string(csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("chart")
        .to_string();
    let title = title.unwrap_or_else(|| stem.clone());
    let chart = svg::chart_from_csv(&text, &title)?;
    let rendered = svg::render_line_chart(&chart)?;
    let dir = out_dir(out);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{stem}.svg"));
    fs::write(&path, rendered)?;
    println!("wrote {}", path.display());
    Ok(())
}
