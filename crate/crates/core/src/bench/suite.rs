//! Suite files: a TOML description of one experiment matrix.
//!
//! ```toml
//! name = "simple-methods"
//! task = "simple"            # simple | slalom | slalom25 | pickplace3d | path/to/task.toml
//! trials = 30
//! seed = 7
//! max_cycles = 5
//! demos_per_behavior = 1
//!
//! [[variants]]
//! name = "poe-mask50"
//! method = "poe"             # poe | moe | neg_weight
//! selector = "mask"          # mask | central | none
//! threshold = 0.5
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{self, TaskSpec};
use crate::feedback::{FeedbackConfig, Method, Selector};
use crate::policy::GridSpec;

use super::BenchError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFile {
    pub phase: usize,
    pub spatial: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantFile {
    pub name: String,
    pub method: String,
    #[serde(default)]
    pub selector: Option<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub moe_mix: Option<f64>,
    #[serde(default)]
    pub neg_weight: Option<f64>,
    #[serde(default)]
    pub max_cycles: Option<usize>,
    #[serde(default)]
    pub demos_per_behavior: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteFile {
    pub name: String,
    pub task: String,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: usize,
    #[serde(default = "default_demos_per_behavior")]
    pub demos_per_behavior: usize,
    #[serde(default)]
    pub behaviors: Option<Vec<String>>,
    #[serde(default)]
    pub demo_noise: Option<f64>,
    #[serde(default)]
    pub demo_len: Option<usize>,
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default)]
    pub k_positive: Option<usize>,
    #[serde(default)]
    pub k_avoidance: Option<usize>,
    #[serde(default)]
    pub continuity: Option<usize>,
    #[serde(default)]
    pub force_cycles: bool,
    #[serde(default)]
    pub grid: Option<GridFile>,
    pub variants: Vec<VariantFile>,
}

fn default_max_cycles() -> usize {
    5
}

fn default_demos_per_behavior() -> usize {
    1
}

/// A resolved experiment matrix: task plus named feedback configurations.
#[derive(Debug, Clone)]
pub struct ExperimentSuite {
    pub name: String,
    pub task: TaskSpec,
    pub trials: usize,
    pub variants: Vec<(String, FeedbackConfig)>,
}

impl ExperimentSuite {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let file: SuiteFile =
            toml::from_str(text).map_err(|e| BenchError::InvalidSuite(format!("parse: {e}")))?;
        Self::from_file_struct(file)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    fn from_file_struct(file: SuiteFile) -> Result<Self, BenchError> {
        if file.trials == 0 {
            return Err(BenchError::InvalidSuite("trials must be >= 1".into()));
        }
        let task = resolve_task(&file.task)?;
        let mut base = FeedbackConfig::new(&task);
        base.seed = file.seed;
        base.max_cycles = file.max_cycles;
        base.demos_per_behavior = file.demos_per_behavior;
        base.behaviors = file.behaviors.clone();
        base.force_cycles = file.force_cycles;
        if let Some(noise) = file.demo_noise {
            base.demo_noise = noise;
        }
        if let Some(len) = file.demo_len {
            base.demo_len = len;
        }
        if let Some(pool) = file.pool_size {
            base.pool_size = pool;
        }
        if let Some(k) = file.k_positive {
            base.k_positive = k;
        }
        if let Some(k) = file.k_avoidance {
            base.k_avoidance = k;
        }
        if let Some(c) = file.continuity {
            base.continuity = c;
        }
        if let Some(grid) = &file.grid {
            base.grid = GridSpec::with_phase(
                grid.phase,
                task.bounds().to_vec(),
                grid.spatial.clone(),
            )
            .map_err(|e| BenchError::InvalidSuite(format!("grid: {e}")))?;
        }
        // Keep the demo pool at least as large as the draw.
        if base.pool_size < base.demos_per_behavior {
            base.pool_size = base.demos_per_behavior;
        }

        let mut names = HashSet::new();
        let mut variants = Vec::with_capacity(file.variants.len());
        for v in &file.variants {
            if !names.insert(v.name.clone()) {
                return Err(BenchError::InvalidSuite(format!(
                    "duplicate variant name {:?}",
                    v.name
                )));
            }
            variants.push((v.name.clone(), resolve_variant(v, &base)?));
        }
        Ok(Self {
            name: file.name,
            task,
            trials: file.trials,
            variants,
        })
    }
}

fn resolve_task(name: &str) -> Result<TaskSpec, BenchError> {
    match name {
        "simple" => Ok(env::make_simple_task()),
        "slalom" => Ok(env::make_slalom_task()),
        "slalom25" => Ok(env::make_slalom_task_with(5)
            .expect("five-gap slalom variant is statically valid")),
        "pickplace3d" => Ok(env::make_pickplace3d_task()),
        other => {
            let path = Path::new(other);
            if path.extension().is_some_and(|e| e == "toml") {
                let text = std::fs::read_to_string(path)?;
                TaskSpec::from_toml(&text)
                    .map_err(|e| BenchError::InvalidSuite(format!("task file: {e}")))
            } else {
                Err(BenchError::UnknownTask(other.to_string()))
            }
        }
    }
}

fn resolve_variant(v: &VariantFile, base: &FeedbackConfig) -> Result<FeedbackConfig, BenchError> {
    let mut cfg = base.clone();
    cfg.method = match v.method.as_str() {
        "poe" => Method::Poe,
        "moe" => Method::Moe,
        "neg_weight" => Method::NegWeight,
        other => {
            return Err(BenchError::InvalidSuite(format!(
                "unknown method {other:?}"
            )))
        }
    };
    cfg.selector = match v.selector.as_deref().unwrap_or("mask") {
        "mask" => Selector::Mask {
            threshold: v.threshold.unwrap_or(0.5),
        },
        "central" => Selector::Central {
            fraction: v.fraction.unwrap_or(1.0 / 6.0),
        },
        "none" => Selector::None,
        other => {
            return Err(BenchError::InvalidSuite(format!(
                "unknown selector {other:?}"
            )))
        }
    };
    if let Some(mix) = v.moe_mix {
        cfg.moe_mix = Some(mix);
    }
    if let Some(w) = v.neg_weight {
        cfg.neg_weight = w;
    }
    if let Some(c) = v.max_cycles {
        cfg.max_cycles = c;
    }
    if let Some(d) = v.demos_per_behavior {
        cfg.demos_per_behavior = d;
        if cfg.pool_size < d {
            cfg.pool_size = d;
        }
    }
    Ok(cfg)
}
