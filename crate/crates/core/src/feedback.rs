//! The negative-feedback cycle: learn from positives, roll out, classify,
//! select the failed region, learn an avoidance policy, apply the configured
//! update, repeat until success or the cycle budget runs out.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{self, EnvError, Outcome, OutcomeKind, TaskSpec};
use crate::gmm::{self, DemoLabel, DemoSet, Demonstration, GmmError};
use crate::mask::{self, Mask, MaskError};
use crate::policy::{
    self, GridDistribution, GridSpec, PolicyError, SampleMode, Trajectory,
};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("invalid feedback config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Which update rule incorporates the failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Masked product-of-experts update from an avoidance policy.
    Poe,
    /// Additive mixture-of-experts baseline.
    Moe,
    /// Full refit with negative sample weights on stored failures.
    NegWeight,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Poe => "poe",
            Method::Moe => "moe",
            Method::NegWeight => "neg_weight",
        }
    }
}

/// How the negative region of a failed rollout is selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// Points whose spatial cells the consensus mask leaves open.
    Mask { threshold: f64 },
    /// Central segment after discarding a fraction at each end.
    Central { fraction: f64 },
    /// The whole trajectory (ablation).
    None,
}

/// Full specification of one feedback run.
#[derive(Debug, Clone)]
pub struct FeedbackConfig {
    pub method: Method,
    pub selector: Selector,
    pub max_cycles: usize,
    /// Demonstrations drawn per behavior (balanced draw).
    pub demos_per_behavior: usize,
    /// Behavior subset; `None` uses every behavior the task declares.
    pub behaviors: Option<Vec<String>>,
    pub grid: GridSpec,
    pub demo_noise: f64,
    pub demo_len: usize,
    /// Pool of synthesized demonstrations per behavior that draws come from.
    pub pool_size: usize,
    pub k_positive: usize,
    pub k_avoidance: usize,
    pub neg_weight: f64,
    pub continuity: usize,
    pub rollout_mode: SampleMode,
    /// Fixed mixture weight for the MoE baseline; `None` uses 1/(1+cycle).
    pub moe_mix: Option<f64>,
    /// Run exactly `max_cycles` cycles regardless of outcome (timing mode).
    pub force_cycles: bool,
    pub seed: u64,
    /// Manual outcome overrides by cycle index: the human-observer pathway.
    pub overrides: HashMap<usize, OutcomeKind>,
}

impl FeedbackConfig {
    /// Defaults for a task: PoE with a 50% mask, five feedback cycles, one
    /// demonstration per behavior.
    pub fn new(task: &TaskSpec) -> Self {
        Self {
            method: Method::Poe,
            selector: Selector::Mask { threshold: 0.5 },
            max_cycles: 5,
            demos_per_behavior: 1,
            behaviors: None,
            grid: task.default_grid(),
            demo_noise: 0.02,
            demo_len: 50,
            pool_size: 10,
            k_positive: 6,
            k_avoidance: 4,
            neg_weight: -1.0,
            continuity: 2,
            rollout_mode: SampleMode::Stochastic,
            moe_mix: None,
            force_cycles: false,
            seed: 0,
            overrides: HashMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_selector(mut self, selector: Selector) -> Self {
        self.selector = selector;
        self
    }

    fn validate(&self, task: &TaskSpec) -> Result<(), FeedbackError> {
        let err = |msg: String| Err(FeedbackError::InvalidConfig(msg));
        if self.grid.ndim() != task.dim() + 1 {
            return err(format!(
                "grid must have {} dims (phase + space), got {}",
                task.dim() + 1,
                self.grid.ndim()
            ));
        }
        for (d, (&(glo, ghi), &(tlo, thi))) in self.grid.bounds()[1..]
            .iter()
            .zip(task.bounds())
            .enumerate()
        {
            if glo > tlo || ghi < thi {
                return err(format!("grid does not cover task bounds in dim {d}"));
            }
        }
        match self.selector {
            Selector::Mask { threshold } if !(threshold > 0.0 && threshold <= 1.0) => {
                return err(format!("mask threshold {threshold} outside (0, 1]"));
            }
            Selector::Central { fraction } if !(0.0..0.5).contains(&fraction) => {
                return err(format!("central fraction {fraction} outside [0, 0.5)"));
            }
            _ => {}
        }
        if self.demos_per_behavior == 0 {
            return err("demos_per_behavior must be at least 1".into());
        }
        if self.pool_size < self.demos_per_behavior {
            return err(format!(
                "pool size {} smaller than demos per behavior {}",
                self.pool_size, self.demos_per_behavior
            ));
        }
        if self.k_positive == 0 || self.k_avoidance == 0 {
            return err("component counts must be at least 1".into());
        }
        if self.neg_weight > 0.0 {
            return err(format!("neg_weight must be <= 0, got {}", self.neg_weight));
        }
        if self.continuity == 0 {
            return err("continuity radius must be at least 1".into());
        }
        if let Some(mix) = self.moe_mix {
            if !(mix > 0.0 && mix < 1.0) {
                return err(format!("moe mix {mix} outside (0, 1)"));
            }
        }
        if let Some(names) = &self.behaviors {
            if names.len() < 2 {
                return err("behavior subset must keep the task ambiguous (>= 2)".into());
            }
            for n in names {
                task.behavior(n)?;
            }
        }
        Ok(())
    }
}

/// One row of feedback history.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: usize,
    pub trajectory: Trajectory,
    pub outcome: Outcome,
    /// Learn + apply wall time for this cycle, in seconds.
    pub wall_time_s: f64,
    /// Serialized size of everything the method must retain between cycles.
    pub state_bytes: usize,
    pub policy: Arc<GridDistribution>,
}

struct Streams {
    pool_seed: u64,
    select_seed: u64,
    em_seed: u64,
    rollout_base: u64,
    cycle_em_base: u64,
}

impl Streams {
    fn derive(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            pool_seed: master.gen(),
            select_seed: master.gen(),
            em_seed: master.gen(),
            rollout_base: master.gen(),
            cycle_em_base: master.gen(),
        }
    }
}

/// Draw the balanced training set: a pool of `pool_size` demonstrations per
/// behavior, from which `demos_per_behavior` are selected at random.
fn draw_demos(
    config: &FeedbackConfig,
    task: &TaskSpec,
    streams: &Streams,
) -> Result<DemoSet, FeedbackError> {
    let names: Vec<String> = match &config.behaviors {
        Some(subset) => subset.clone(),
        None => task.behaviors().iter().map(|b| b.name.clone()).collect(),
    };
    let mut select_rng = ChaCha8Rng::seed_from_u64(streams.select_seed);
    let mut demos = DemoSet::empty();
    for (i, name) in names.iter().enumerate() {
        let pool = env::synth_demos_len(
            task,
            name,
            config.pool_size,
            config.demo_noise,
            streams.pool_seed.wrapping_add(i as u64),
            config.demo_len,
        )?;
        let chosen = index_sample(
            &mut select_rng,
            config.pool_size,
            config.demos_per_behavior,
        );
        for idx in chosen.iter() {
            demos.push(pool.demos()[idx].clone())?;
        }
    }
    Ok(demos)
}

/// Pick the negative region of a failed rollout.
///
/// Mask selection keeps points whose spatial cells are open; if that leaves
/// nothing, it falls back to the central segment, and ultimately to the whole
/// trajectory, so the avoidance fit always has data.
fn select_region(traj: &Trajectory, selector: Selector, mask: &Mask) -> Vec<(f64, Vec<f64>)> {
    let all: Vec<(f64, Vec<f64>)> = traj.points().to_vec();
    match selector {
        Selector::None => all,
        Selector::Central { fraction } => match mask::central_trajectory_selector(traj, fraction)
        {
            Ok(seg) => seg.points().to_vec(),
            Err(_) => all,
        },
        Selector::Mask { .. } => {
            let spatial = mask.spatial_spec();
            let kept: Vec<(f64, Vec<f64>)> = traj
                .points()
                .iter()
                .filter(|(_, pos)| mask.allows(&spatial.cell_of(pos)))
                .cloned()
                .collect();
            if !kept.is_empty() {
                kept
            } else {
                match mask::central_trajectory_selector(traj, 1.0 / 6.0) {
                    Ok(seg) => seg.points().to_vec(),
                    Err(_) => all,
                }
            }
        }
    }
}

fn fit_avoidance(
    region: &[(f64, Vec<f64>)],
    k: usize,
    seed: u64,
    grid: &GridSpec,
) -> Result<GridDistribution, FeedbackError> {
    let points: Vec<nalgebra::DVector<f64>> = region
        .iter()
        .map(|(phase, pos)| {
            let mut v = Vec::with_capacity(1 + pos.len());
            v.push(*phase);
            v.extend_from_slice(pos);
            nalgebra::DVector::from_vec(v)
        })
        .collect();
    let weights = vec![1.0; points.len()];
    let k = k.min(points.len());
    let fit = gmm::fit_em_points(&points, &weights, k, seed)?;
    Ok(gmm::rasterize(&fit.mixture, grid))
}

fn rollout(
    policy: &GridDistribution,
    config: &FeedbackConfig,
    task: &TaskSpec,
    seed: u64,
) -> (Trajectory, Outcome) {
    match policy::sample_trajectory(policy, config.rollout_mode, config.continuity, seed) {
        Ok(traj) => {
            let outcome = env::evaluate(&traj, task);
            (traj.with_outcome(outcome.clone()), outcome)
        }
        // A dead-ended rollout never reaches the goal.
        Err(PolicyError::DeadEnd { partial, .. }) => {
            let distance = partial
                .last_position()
                .map(|p| {
                    p.iter()
                        .zip(task.goal())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .unwrap_or(f64::INFINITY);
            let outcome = Outcome::GoalMiss { distance };
            ((*partial).with_outcome(outcome.clone()), outcome)
        }
        Err(e) => unreachable!("rollout preconditions hold by construction: {e}"),
    }
}

fn apply_override(
    outcome: Outcome,
    cycle: usize,
    config: &FeedbackConfig,
    traj: &Trajectory,
    task: &TaskSpec,
) -> Outcome {
    match config.overrides.get(&cycle) {
        None => outcome,
        Some(OutcomeKind::Success) => Outcome::Success,
        Some(OutcomeKind::Collision) => Outcome::Collision { segment: 0 },
        Some(OutcomeKind::GoalMiss) => {
            let distance = traj
                .last_position()
                .map(|p| {
                    p.iter()
                        .zip(task.goal())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .unwrap_or(f64::INFINITY);
            Outcome::GoalMiss { distance }
        }
    }
}

fn state_bytes(
    method: Method,
    policy: &GridDistribution,
    mask: &Mask,
    stored: &DemoSet,
) -> usize {
    match method {
        // Everything a PoE/MoE scheme needs between cycles: the policy grid
        // and the mask.
        Method::Poe | Method::Moe => policy.to_bytes().len() + mask.byte_size(),
        // The negative-weighting baseline must keep the whole dataset.
        Method::NegWeight => gmm::io::demoset_to_string(stored).len(),
    }
}

/// Run the negative-feedback loop and record its full history.
///
/// Record 0 is the baseline: learn from positives and roll out once. Each
/// subsequent record is one feedback cycle. The loop ends at the first
/// success (unless `force_cycles` is set) or after `max_cycles` cycles.
pub fn run_feedback(
    config: &FeedbackConfig,
    task: &TaskSpec,
) -> Result<Vec<CycleRecord>, FeedbackError> {
    config.validate(task)?;
    let streams = Streams::derive(config.seed);
    let demos = draw_demos(config, task, &streams)?;

    // Cycle 0: learn the positive policy (and, for mask selection, the
    // consensus mask) then generate the first rollout.
    let learn_start = Instant::now();
    let fit = gmm::fit_em(&demos, config.k_positive, streams.em_seed)?;
    let mut policy = gmm::rasterize(&fit.mixture, &config.grid);
    let mask = match config.selector {
        Selector::Mask { threshold } => mask::build_mask(&demos, &config.grid, threshold)?,
        _ => Mask::permissive(config.grid.spatial()),
    };
    let wall = learn_start.elapsed().as_secs_f64();

    let mut stored = demos;
    let (traj, outcome) = rollout(&policy, config, task, streams.rollout_base);
    let outcome = apply_override(outcome, 0, config, &traj, task);
    let mut records = vec![CycleRecord {
        cycle: 0,
        trajectory: traj.clone().with_outcome(outcome.clone()),
        outcome,
        wall_time_s: wall.max(f64::MIN_POSITIVE),
        state_bytes: state_bytes(config.method, &policy, &mask, &stored),
        policy: Arc::new(policy.clone()),
    }];

    for cycle in 1..=config.max_cycles {
        let last = records.last().expect("record 0 exists");
        if last.outcome.is_success() && !config.force_cycles {
            break;
        }
        let region = select_region(&last.trajectory, config.selector, &mask);
        let cycle_seed = streams.cycle_em_base.wrapping_add(cycle as u64);

        let learn_start = Instant::now();
        if region.is_empty() {
            // Dead-ended rollout with an empty partial path: nothing to
            // learn from this cycle; the policy carries over.
        } else {
            match config.method {
                Method::Poe => {
                    let avoid =
                        fit_avoidance(&region, config.k_avoidance, cycle_seed, &config.grid)?;
                    policy = policy::poe_apply_negative(&policy, &avoid, &mask)?;
                }
                Method::Moe => {
                    let avoid =
                        fit_avoidance(&region, config.k_avoidance, cycle_seed, &config.grid)?;
                    let mix = config.moe_mix.unwrap_or(1.0 / (1.0 + cycle as f64));
                    policy = policy::moe_apply_negative(&policy, &avoid, &mask, mix)?;
                }
                Method::NegWeight => {
                    stored.push(Demonstration::new(region, DemoLabel::Negative, 1.0)?)?;
                    match policy::neg_weight_refit(
                        &stored,
                        config.k_positive,
                        config.neg_weight,
                        cycle_seed,
                        &config.grid,
                    ) {
                        Ok(refit) => policy = refit,
                        // Accumulated failures can cancel the entire positive
                        // mass; the baseline saturates (keeps its last policy)
                        // instead of aborting the run.
                        Err(PolicyError::Gmm(GmmError::AllMassNegative)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        let wall = learn_start.elapsed().as_secs_f64();

        let (traj, outcome) = rollout(
            &policy,
            config,
            task,
            streams.rollout_base.wrapping_add(cycle as u64),
        );
        let outcome = apply_override(outcome, cycle, config, &traj, task);
        records.push(CycleRecord {
            cycle,
            trajectory: traj.clone().with_outcome(outcome.clone()),
            outcome,
            wall_time_s: wall.max(f64::MIN_POSITIVE),
            state_bytes: state_bytes(config.method, &policy, &mask, &stored),
            policy: Arc::new(policy.clone()),
        });
    }
    Ok(records)
}

/// Fraction of trials that have succeeded by each cycle index.
///
/// A trial that succeeds at cycle `j` counts as a success for every cycle
/// `c >= j`, matching the loop's terminate-on-success contract; the curve is
/// non-decreasing by construction. Trial `i` runs with seed `base + i`.
pub fn success_rate(
    config: &FeedbackConfig,
    task: &TaskSpec,
    trials: usize,
) -> Result<Vec<f64>, FeedbackError> {
    let histories = run_trials(config, task, trials)?;
    Ok(success_curve(&histories, config.max_cycles))
}

/// Run independent seeded trials (in parallel) and collect their histories.
pub fn run_trials(
    config: &FeedbackConfig,
    task: &TaskSpec,
    trials: usize,
) -> Result<Vec<Vec<CycleRecord>>, FeedbackError> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = config.clone().with_seed(config.seed.wrapping_add(i as u64));
            run_feedback(&cfg, task)
        })
        .collect()
}

/// Per-cycle success fractions for a set of trial histories.
pub fn success_curve(histories: &[Vec<CycleRecord>], max_cycles: usize) -> Vec<f64> {
    let mut curve = vec![0.0; max_cycles + 1];
    for history in histories {
        let first_success = history
            .iter()
            .position(|r| r.outcome.is_success())
            .unwrap_or(usize::MAX);
        for (c, slot) in curve.iter_mut().enumerate() {
            if c >= first_success {
                *slot += 1.0;
            }
        }
    }
    let n = histories.len().max(1) as f64;
    for slot in &mut curve {
        *slot /= n;
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_simple_task;

    fn quick_config(task: &TaskSpec) -> FeedbackConfig {
        let mut cfg = FeedbackConfig::new(task);
        // Small grid keeps unit tests fast.
        cfg.grid = GridSpec::with_phase(12, task.bounds().to_vec(), vec![12, 12]).unwrap();
        cfg.demo_len = 24;
        cfg.pool_size = 3;
        cfg
    }

    #[test]
    fn zero_cycles_yields_baseline_only() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 0;
        let history = run_feedback(&cfg, &task).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(history[0].cycle, 0);
        assert!(history[0].wall_time_s > 0.0);
    }

    #[test]
    fn loop_terminates_on_success() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 5;
        // Force success at cycle 2 through the manual override hook.
        cfg.overrides.insert(2, OutcomeKind::Success);
        cfg.overrides.insert(0, OutcomeKind::Collision);
        cfg.overrides.insert(1, OutcomeKind::Collision);
        let history = run_feedback(&cfg, &task).unwrap();
        assert_eq!(history.len(), 3);
        assert!(history[2].outcome.is_success());
    }

    #[test]
    fn histories_are_reproducible() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 2;
        cfg.seed = 31;
        let a = run_feedback(&cfg, &task).unwrap();
        let b = run_feedback(&cfg, &task).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trajectory, y.trajectory);
            assert_eq!(x.outcome, y.outcome);
            assert_eq!(x.state_bytes, y.state_bytes);
            assert_eq!(x.policy.values(), y.policy.values());
        }
    }

    #[test]
    fn cycle_indices_are_contiguous() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 4;
        cfg.force_cycles = true;
        let history = run_feedback(&cfg, &task).unwrap();
        assert_eq!(history.len(), 5);
        for (i, r) in history.iter().enumerate() {
            assert_eq!(r.cycle, i);
        }
    }

    #[test]
    fn poe_state_size_is_constant_while_negweight_grows() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 3;
        cfg.force_cycles = true;
        let poe = run_feedback(&cfg, &task).unwrap();
        let sizes: Vec<usize> = poe.iter().map(|r| r.state_bytes).collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]), "poe sizes {sizes:?}");

        cfg.method = Method::NegWeight;
        let nw = run_feedback(&cfg, &task).unwrap();
        let sizes: Vec<usize> = nw.iter().map(|r| r.state_bytes).collect();
        assert!(
            sizes.windows(2).all(|w| w[0] < w[1]),
            "neg_weight sizes {sizes:?}"
        );
    }

    #[test]
    fn success_curve_counting() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 3;
        // Success immediately: flat 1.0 curve.
        cfg.overrides.insert(0, OutcomeKind::Success);
        let curve = success_rate(&cfg, &task, 4).unwrap();
        assert_eq!(curve, vec![1.0; 4]);
        // Never successful: flat 0.0 curve, still non-decreasing.
        let mut cfg = quick_config(&task);
        cfg.max_cycles = 2;
        for c in 0..=2 {
            cfg.overrides.insert(c, OutcomeKind::Collision);
        }
        let curve = success_rate(&cfg, &task, 3).unwrap();
        assert_eq!(curve, vec![0.0; 3]);
    }

    #[test]
    fn selector_threshold_one_passes_whole_region() {
        // With threshold 1.0 no cell can exceed the count bound, so the mask
        // is fully open and selection keeps every trajectory point.
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.selector = Selector::Mask { threshold: 1.0 };
        cfg.max_cycles = 1;
        cfg.overrides.insert(0, OutcomeKind::Collision);
        let history = run_feedback(&cfg, &task).unwrap();
        assert!(history.len() >= 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let task = make_simple_task();
        let mut cfg = quick_config(&task);
        cfg.selector = Selector::Mask { threshold: 0.0 };
        assert!(run_feedback(&cfg, &task).is_err());
        let mut cfg = quick_config(&task);
        cfg.behaviors = Some(vec!["over".into()]);
        assert!(run_feedback(&cfg, &task).is_err());
        let mut cfg = quick_config(&task);
        cfg.behaviors = Some(vec!["over".into(), "sideways".into()]);
        assert!(run_feedback(&cfg, &task).is_err());
        let mut cfg = quick_config(&task);
        cfg.pool_size = 0;
        assert!(run_feedback(&cfg, &task).is_err());
    }
}
