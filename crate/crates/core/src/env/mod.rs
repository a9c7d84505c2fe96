//! Simulated trajectory tasks: geometry, synthetic demonstrations, and
//! rollout classification.

mod geometry;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{DemoSet, Demonstration, GmmError};
use crate::policy::{GridSpec, Trajectory, TrajectorySource};

pub use geometry::GEOMETRY_VERSION;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown behavior {0:?}")]
    UnknownBehavior(String),
    #[error("noise too large: no successful demonstration for {behavior:?} in {attempts} attempts")]
    NoiseTooLarge { behavior: String, attempts: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("cannot balance {n} demonstrations across {a} behaviors")]
    UnbalancedCount { n: usize, a: usize },
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, EnvError> {
        if min.len() != max.len() || min.is_empty() {
            return Err(EnvError::InvalidTask("box dimension mismatch".into()));
        }
        if min.iter().zip(&max).any(|(lo, hi)| lo >= hi) {
            return Err(EnvError::InvalidTask(
                "box min must be strictly below max".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(&x, (&lo, &hi))| x >= lo && x <= hi)
    }

    /// Exact segment intersection via slab clipping. Touching counts as a hit.
    pub fn intersects_segment(&self, a: &[f64], b: &[f64]) -> bool {
        let mut t_min: f64 = 0.0;
        let mut t_max: f64 = 1.0;
        for d in 0..self.dim() {
            let dir = b[d] - a[d];
            if dir.abs() < 1e-15 {
                if a[d] < self.min[d] || a[d] > self.max[d] {
                    return false;
                }
            } else {
                let t1 = (self.min[d] - a[d]) / dir;
                let t2 = (self.max[d] - a[d]) / dir;
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                t_min = t_min.max(lo);
                t_max = t_max.min(hi);
                if t_min > t_max {
                    return false;
                }
            }
        }
        true
    }

    /// Box grown by `margin` on every face.
    pub fn inflate(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.iter().map(|v| v - margin).collect(),
            max: self.max.iter().map(|v| v + margin).collect(),
        }
    }
}

/// Rollout classification. `Success` requires both a collision-free path and
/// a final position within the goal tolerance.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    Collision { segment: usize },
    GoalMiss { distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Success,
    Collision,
    GoalMiss,
}

impl OutcomeKind {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeKind::Success => "success",
            OutcomeKind::Collision => "collision",
            OutcomeKind::GoalMiss => "goalmiss",
        }
    }

    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "success" => Ok(OutcomeKind::Success),
            "collision" => Ok(OutcomeKind::Collision),
            "goalmiss" => Ok(OutcomeKind::GoalMiss),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Success => OutcomeKind::Success,
            Outcome::Collision { .. } => OutcomeKind::Collision,
            Outcome::GoalMiss { .. } => OutcomeKind::GoalMiss,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }

    /// Parse the trajectory-text outcome column. Detail fields are not part
    /// of that format and default to zero. `"unevaluated"` maps to `None`.
    pub fn parse_kind_name(name: &str) -> Result<Option<Outcome>, String> {
        if name == "unevaluated" {
            return Ok(None);
        }
        Ok(Some(match OutcomeKind::parse(name)? {
            OutcomeKind::Success => Outcome::Success,
            OutcomeKind::Collision => Outcome::Collision { segment: 0 },
            OutcomeKind::GoalMiss => Outcome::GoalMiss { distance: 0.0 },
        }))
    }
}

/// A named waypoint template: one hypothesis for how the task may be solved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub name: String,
    pub waypoints: Vec<Vec<f64>>,
}

/// Environment geometry plus the declared behavior hypotheses.
///
/// The number of behaviors is the task's ambiguity: the count of distinct
/// valid generalizations of the demonstrated motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    name: String,
    geometry_version: u32,
    dim: usize,
    bounds: Vec<(f64, f64)>,
    start: Vec<f64>,
    goal: Vec<f64>,
    goal_tolerance: f64,
    obstacles: Vec<Aabb>,
    behaviors: Vec<Behavior>,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        bounds: Vec<(f64, f64)>,
        start: Vec<f64>,
        goal: Vec<f64>,
        goal_tolerance: f64,
        obstacles: Vec<Aabb>,
        behaviors: Vec<Behavior>,
    ) -> Result<Self, EnvError> {
        let dim = bounds.len();
        if dim != 2 && dim != 3 {
            return Err(EnvError::InvalidTask(format!(
                "tasks must be 2D or 3D, got {dim}"
            )));
        }
        let task = Self {
            name: name.into(),
            geometry_version: GEOMETRY_VERSION,
            dim,
            bounds,
            start,
            goal,
            goal_tolerance,
            obstacles,
            behaviors,
        };
        task.validate()?;
        Ok(task)
    }

    fn validate(&self) -> Result<(), EnvError> {
        let err = |msg: String| Err(EnvError::InvalidTask(msg));
        if self.start.len() != self.dim || self.goal.len() != self.dim {
            return err("start/goal dimension mismatch".into());
        }
        if self.goal_tolerance <= 0.0 {
            return err("goal tolerance must be positive".into());
        }
        if self.behaviors.len() < 2 {
            return err(format!(
                "ambiguity must be at least 2, got {}",
                self.behaviors.len()
            ));
        }
        for obs in &self.obstacles {
            if obs.dim() != self.dim {
                return err("obstacle dimension mismatch".into());
            }
            if obs.contains(&self.start) || obs.contains(&self.goal) {
                return err("start and goal must lie outside all obstacles".into());
            }
        }
        let inside = |p: &[f64]| {
            p.iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
        };
        if !inside(&self.start) || !inside(&self.goal) {
            return err("start and goal must lie inside the workspace".into());
        }
        for b in &self.behaviors {
            if b.waypoints.len() < 2 {
                return err(format!("behavior {:?} needs at least 2 waypoints", b.name));
            }
            if b.waypoints.first().unwrap() != &self.start
                || b.waypoints.last().unwrap() != &self.goal
            {
                return err(format!(
                    "behavior {:?} must run from start to goal",
                    b.name
                ));
            }
            for w in &b.waypoints {
                if w.len() != self.dim || !inside(w) {
                    return err(format!("behavior {:?} waypoint out of bounds", b.name));
                }
            }
            for (i, seg) in b.waypoints.windows(2).enumerate() {
                for obs in &self.obstacles {
                    if obs.intersects_segment(&seg[0], &seg[1]) {
                        return err(format!(
                            "behavior {:?} segment {i} intersects an obstacle",
                            b.name
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn goal_tolerance(&self) -> f64 {
        self.goal_tolerance
    }

    pub fn obstacles(&self) -> &[Aabb] {
        &self.obstacles
    }

    pub fn behaviors(&self) -> &[Behavior] {
        &self.behaviors
    }

    /// Declared ambiguity: the number of behavior hypotheses.
    pub fn ambiguity(&self) -> usize {
        self.behaviors.len()
    }

    pub fn behavior(&self, name: &str) -> Result<&Behavior, EnvError> {
        self.behaviors
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| EnvError::UnknownBehavior(name.to_string()))
    }

    /// Default policy lattice for this task: 30 phase cells, with a coarse
    /// spatial resolution (12 cells per dimension in 2D, 8 in 3D) in the
    /// spirit of block-discretized policy spaces.
    pub fn default_grid(&self) -> GridSpec {
        let per_dim = if self.dim == 2 { 12 } else { 8 };
        GridSpec::with_phase(30, self.bounds.clone(), vec![per_dim; self.dim])
            .expect("task bounds are valid grid bounds")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("task specs serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let task: TaskSpec =
            toml::from_str(text).map_err(|e| EnvError::InvalidTask(format!("parse: {e}")))?;
        task.validate()?;
        Ok(task)
    }
}

pub use geometry::{
    make_pickplace3d_task, make_pickplace3d_task_with_margin, make_simple_task, make_slalom_task,
    make_slalom_task_with,
};

/// Resample a waypoint polyline to `len` points spaced uniformly by arc
/// length, phase-indexed from exactly 0 to exactly 1.
pub fn template_path(behavior: &Behavior, len: usize) -> Vec<(f64, Vec<f64>)> {
    debug_assert!(len >= 2);
    let wps = &behavior.waypoints;
    let mut cum = vec![0.0];
    for seg in wps.windows(2) {
        let d: f64 = seg[0]
            .iter()
            .zip(&seg[1])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let phase = i as f64 / (len - 1) as f64;
        let target = phase * total;
        // Find the segment containing this arc length.
        let mut seg = 0;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let u = if seg_len > 0.0 {
            ((target - cum[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let pos: Vec<f64> = wps[seg]
            .iter()
            .zip(&wps[seg + 1])
            .map(|(a, b)| a + (b - a) * u)
            .collect();
        out.push((phase, pos));
    }
    out
}

const DEFAULT_DEMO_LEN: usize = 50;
const RESAMPLE_BUDGET: usize = 100;
const NOISE_SMOOTH_WINDOW: usize = 5;
const NOISE_TAPER: usize = 5;

/// Synthesize `n` successful demonstrations of one behavior.
///
/// The behavior's waypoint polyline is resampled to a fixed-length
/// phase-indexed path; smooth correlated noise (moving-average filtered,
/// tapered to zero at the endpoints) is added per trajectory. Demonstrations
/// that fail evaluation are rejection-resampled.
pub fn synth_demos(
    task: &TaskSpec,
    behavior: &str,
    n: usize,
    noise: f64,
    seed: u64,
) -> Result<DemoSet, EnvError> {
    synth_demos_len(task, behavior, n, noise, seed, DEFAULT_DEMO_LEN)
}

/// [`synth_demos`] with an explicit per-demonstration sample count.
pub fn synth_demos_len(
    task: &TaskSpec,
    behavior: &str,
    n: usize,
    noise: f64,
    seed: u64,
    len: usize,
) -> Result<DemoSet, EnvError> {
    debug_assert!(noise >= 0.0);
    let template = template_path(task.behavior(behavior)?, len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(n);
    for _ in 0..n {
        let mut accepted = None;
        for _ in 0..RESAMPLE_BUDGET {
            let samples = perturb_template(&template, task, noise, &mut rng);
            let traj = Trajectory::new(samples.clone(), TrajectorySource::Demo);
            if evaluate(&traj, task).is_success() {
                accepted = Some(samples);
                break;
            }
        }
        let samples = accepted.ok_or_else(|| EnvError::NoiseTooLarge {
            behavior: behavior.to_string(),
            attempts: RESAMPLE_BUDGET,
        })?;
        demos.push(Demonstration::positive(samples)?);
    }
    Ok(DemoSet::new(demos)?)
}

/// Balanced pool: `n_total / ambiguity` demonstrations of every behavior.
pub fn synth_demos_balanced(
    task: &TaskSpec,
    n_total: usize,
    noise: f64,
    seed: u64,
) -> Result<DemoSet, EnvError> {
    let a = task.ambiguity();
    if !n_total.is_multiple_of(a) {
        return Err(EnvError::UnbalancedCount { n: n_total, a });
    }
    let per = n_total / a;
    let mut all = DemoSet::empty();
    for (i, b) in task.behaviors().to_vec().iter().enumerate() {
        let demos = synth_demos(task, &b.name, per, noise, seed.wrapping_add(i as u64))?;
        for d in demos.demos() {
            all.push(d.clone())?;
        }
    }
    Ok(all)
}

fn perturb_template(
    template: &[(f64, Vec<f64>)],
    task: &TaskSpec,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, Vec<f64>)> {
    let len = template.len();
    let dim = task.dim();
    if noise == 0.0 {
        return template.to_vec();
    }
    // White noise, smoothed by a centered moving average so consecutive
    // samples stay correlated, tapered to zero at both endpoints.
    let mut raw = vec![vec![0.0; len]; dim];
    for row in raw.iter_mut() {
        for v in row.iter_mut() {
            *v = noise * gauss(rng);
        }
    }
    let half = NOISE_SMOOTH_WINDOW / 2;
    let mut out = Vec::with_capacity(len);
    for (i, (phase, base)) in template.iter().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(len);
        let taper = (i as f64 / NOISE_TAPER as f64)
            .min((len - 1 - i) as f64 / NOISE_TAPER as f64)
            .min(1.0);
        let pos: Vec<f64> = (0..dim)
            .map(|d| {
                let avg: f64 = raw[d][lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                let (b_lo, b_hi) = task.bounds()[d];
                (base[d] + taper * avg).clamp(b_lo, b_hi)
            })
            .collect();
        out.push((*phase, pos));
    }
    out
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Classify a trajectory: collision if any inter-point segment intersects an
/// obstacle (first offending segment reported), otherwise goal-miss if the
/// final position is outside the goal tolerance, otherwise success.
pub fn evaluate(traj: &Trajectory, task: &TaskSpec) -> Outcome {
    debug_assert!(!traj.is_empty());
    let points: Vec<&[f64]> = traj.positions().collect();
    for (i, pair) in points.windows(2).enumerate() {
        for obs in task.obstacles() {
            if obs.intersects_segment(pair[0], pair[1]) {
                return Outcome::Collision { segment: i };
            }
        }
    }
    let last = points.last().expect("nonempty trajectory");
    let distance: f64 = last
        .iter()
        .zip(task.goal())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if distance > task.goal_tolerance() {
        Outcome::GoalMiss { distance }
    } else {
        Outcome::Success
    }
}
