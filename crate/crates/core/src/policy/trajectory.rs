//! Phase-indexed paths produced by demonstrations or policy rollouts.

use std::fmt::Write as _;

use crate::env::Outcome;

use super::{GridSpec, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectorySource {
    Demo,
    Rollout,
}

/// Ordered (phase, position) points at fixed phase steps.
///
/// Rollout phases are the grid's phase-cell centers; `outcome` is `None`
/// until the trajectory has been evaluated against a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<(f64, Vec<f64>)>,
    source: TrajectorySource,
    outcome: Option<Outcome>,
}

impl Trajectory {
    pub fn new(points: Vec<(f64, Vec<f64>)>, source: TrajectorySource) -> Self {
        Self {
            points,
            source,
            outcome: None,
        }
    }

    pub fn points(&self) -> &[(f64, Vec<f64>)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source(&self) -> TrajectorySource {
        self.source
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn set_outcome(&mut self, outcome: Outcome) {
        self.outcome = Some(outcome);
    }

    pub fn with_outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = Some(outcome);
        self
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|(_, p)| p.as_slice())
    }

    pub fn last_position(&self) -> Option<&[f64]> {
        self.points.last().map(|(_, p)| p.as_slice())
    }

    /// Sub-trajectory over `range` of point indices.
    pub fn segment(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            points: self.points[start..end].to_vec(),
            source: self.source,
            outcome: self.outcome.clone(),
        }
    }

    /// Spatial cell multi-indices of each point on `spec`'s spatial subgrid.
    pub fn spatial_cells(&self, spec: &GridSpec) -> Vec<Vec<usize>> {
        let spatial = spec.spatial();
        self.points
            .iter()
            .map(|(_, p)| spatial.cell_of(p))
            .collect()
    }

    /// Text export: header line, then one `phase x y [z]` row per point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let source = match self.source {
            TrajectorySource::Demo => "demo",
            TrajectorySource::Rollout => "rollout",
        };
        let outcome = match &self.outcome {
            None => "unevaluated".to_string(),
            Some(o) => o.kind().name().to_string(),
        };
        writeln!(out, "trajectory {source} {outcome}").unwrap();
        for (phase, pos) in &self.points {
            write!(out, "{phase}").unwrap();
            for x in pos {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let bad = |msg: String| PolicyError::InvalidSpec(format!("trajectory parse: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "trajectory" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let source = match fields[1] {
            "demo" => TrajectorySource::Demo,
            "rollout" => TrajectorySource::Rollout,
            s => return Err(bad(format!("unknown source {s:?}"))),
        };
        let outcome = Outcome::parse_kind_name(fields[2])
            .map_err(|e| bad(format!("bad outcome {:?}: {e}", fields[2])))?;
        let mut points = Vec::new();
        for line in lines {
            let nums: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| bad(format!("bad row {line:?}: {e}")))?;
            if nums.len() < 3 {
                return Err(bad(format!("row {line:?} needs phase + 2 or 3 coords")));
            }
            points.push((nums[0], nums[1..].to_vec()));
        }
        let mut traj = Trajectory::new(points, source);
        if let Some(o) = outcome {
            traj.set_outcome(o);
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Outcome;

    #[test]
    fn text_roundtrip() {
        let t = Trajectory::new(
            vec![
                (0.05, vec![0.1, 0.2]),
                (0.15, vec![0.3, 0.25]),
                (0.25, vec![0.5, 0.21]),
            ],
            TrajectorySource::Rollout,
        )
        .with_outcome(Outcome::Collision { segment: 1 });
        let text = t.to_text();
        let back = Trajectory::from_text(&text).unwrap();
        assert_eq!(back.points(), t.points());
        assert_eq!(back.source(), t.source());
        // Kind survives the text format; collision detail does not.
        assert_eq!(
            back.outcome().map(|o| o.kind()),
            t.outcome().map(|o| o.kind())
        );
    }

    #[test]
    fn unevaluated_roundtrip() {
        let t = Trajectory::new(vec![(0.5, vec![1.0, 2.0, 3.0])], TrajectorySource::Demo);
        let back = Trajectory::from_text(&t.to_text()).unwrap();
        assert!(back.outcome().is_none());
        assert_eq!(back.points()[0].1.len(), 3);
    }
}
