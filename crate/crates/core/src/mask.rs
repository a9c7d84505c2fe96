//! Consensus masking: cells traversed by more than a threshold fraction of
//! the positive demonstrations are protected from negative feedback.
//!
//! The mask is purely spatial; when applied to a policy grid it is broadcast
//! across every phase slice.

use std::fmt::Write as _;

use thiserror::Error;

use crate::gmm::DemoSet;
use crate::policy::{GridSpec, Trajectory};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask construction requires at least one positive demonstration")]
    NoPositiveDemos,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("discard fraction must lie in [0, 0.5), got {0}")]
    InvalidFraction(f64),
    #[error("selection removed every trajectory point")]
    EmptySelection,
    #[error("demonstration dimension {got} does not match grid dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Binary consensus field over the spatial subgrid.
///
/// `bits[c] = 0` (protected) exactly when more than `threshold * n_demos`
/// demonstrations traverse cell `c`; otherwise 1 (feedback allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    spatial_spec: GridSpec,
    bits: Vec<u8>,
    counts: Vec<u32>,
    threshold: f64,
    n_demos: usize,
}

impl Mask {
    /// All-ones mask: nothing protected. Used when no consensus selector is
    /// configured.
    pub fn permissive(spatial_spec: GridSpec) -> Self {
        let n = spatial_spec.len();
        Self {
            spatial_spec,
            bits: vec![1; n],
            counts: vec![0; n],
            threshold: 1.0,
            n_demos: 0,
        }
    }

    /// Synthetic mask from explicit bits; counts are derived so the
    /// count/threshold invariant holds. Intended for tests and tooling.
    pub fn from_bits(
        spatial_spec: GridSpec,
        bits: Vec<u8>,
        threshold: f64,
    ) -> Result<Self, MaskError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(MaskError::InvalidThreshold(threshold));
        }
        if bits.len() != spatial_spec.len() {
            return Err(MaskError::DimensionMismatch {
                expected: spatial_spec.len(),
                got: bits.len(),
            });
        }
        let counts = bits.iter().map(|&b| if b == 0 { 1 } else { 0 }).collect();
        Ok(Self {
            spatial_spec,
            bits,
            counts,
            threshold,
            n_demos: 1,
        })
    }

    pub fn spatial_spec(&self) -> &GridSpec {
        &self.spatial_spec
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn n_demos(&self) -> usize {
        self.n_demos
    }

    /// Bit for a flattened spatial cell index.
    pub fn bit(&self, spatial_idx: usize) -> u8 {
        self.bits[spatial_idx]
    }

    /// True when negative feedback may touch this spatial cell.
    pub fn allows(&self, spatial_multi: &[usize]) -> bool {
        self.bits[self.spatial_spec.flatten(spatial_multi)] == 1
    }

    /// Text grid of 0/1: header line, then one row per leading spatial index
    /// (3D grids emit one blank-line-separated block per slab).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cells = self.spatial_spec.cells();
        writeln!(
            out,
            "mask v1 threshold={} demos={} cells={}",
            self.threshold,
            self.n_demos,
            cells
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("x")
        )
        .unwrap();
        match cells.len() {
            1 => {
                for i in 0..cells[0] {
                    out.push(if self.bits[i] == 1 { '1' } else { '0' });
                }
                out.push('\n');
            }
            2 => {
                for i in 0..cells[0] {
                    for j in 0..cells[1] {
                        let idx = self.spatial_spec.flatten(&[i, j]);
                        out.push(if self.bits[idx] == 1 { '1' } else { '0' });
                    }
                    out.push('\n');
                }
            }
            _ => {
                for i in 0..cells[0] {
                    for j in 0..cells[1] {
                        for k in 0..cells[2] {
                            let idx = self.spatial_spec.flatten(&[i, j, k]);
                            out.push(if self.bits[idx] == 1 { '1' } else { '0' });
                        }
                        out.push('\n');
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Serialized footprint in bytes (the text export).
    pub fn byte_size(&self) -> usize {
        self.to_text().len()
    }
}

/// Count distinct demonstrations traversing each spatial cell and threshold
/// into a binary mask.
///
/// Traversal uses stepped segment rasterization with a step of at most half
/// the minimum cell edge, so fast-crossing segments register in every cell
/// they pass through. Each demonstration increments a cell's count at most
/// once.
pub fn build_mask(demos: &DemoSet, spec: &GridSpec, threshold: f64) -> Result<Mask, MaskError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MaskError::InvalidThreshold(threshold));
    }
    let positives = demos.positives();
    if positives.is_empty() {
        return Err(MaskError::NoPositiveDemos);
    }
    let spatial = spec.spatial();
    if let Some(dim) = positives.dim() {
        if dim != spatial.ndim() {
            return Err(MaskError::DimensionMismatch {
                expected: spatial.ndim(),
                got: dim,
            });
        }
    }
    let n_cells = spatial.len();
    let step = 0.5
        * (0..spatial.ndim())
            .map(|d| spatial.cell_width(d))
            .fold(f64::INFINITY, f64::min);
    let mut counts = vec![0u32; n_cells];
    let mut visited = vec![false; n_cells];
    for demo in positives.demos() {
        visited.iter_mut().for_each(|v| *v = false);
        let pts: Vec<&[f64]> = demo.samples().iter().map(|(_, p)| p.as_slice()).collect();
        for pair in pts.windows(2) {
            mark_segment(&spatial, pair[0], pair[1], step, &mut visited);
        }
        if pts.len() == 1 {
            visited[spatial.flatten(&spatial.cell_of(pts[0]))] = true;
        }
        for (c, &v) in visited.iter().enumerate() {
            if v {
                counts[c] += 1;
            }
        }
    }
    let n = positives.len();
    let bits = counts
        .iter()
        .map(|&c| if c as f64 > threshold * n as f64 { 0 } else { 1 })
        .collect();
    Ok(Mask {
        spatial_spec: spatial,
        bits,
        counts,
        threshold,
        n_demos: n,
    })
}

fn mark_segment(spatial: &GridSpec, a: &[f64], b: &[f64], step: f64, visited: &mut [bool]) {
    let length: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt();
    let steps = (length / step).ceil().max(1.0) as usize;
    let mut point = vec![0.0; a.len()];
    for k in 0..=steps {
        let u = k as f64 / steps as f64;
        for (d, slot) in point.iter_mut().enumerate() {
            *slot = a[d] + (b[d] - a[d]) * u;
        }
        visited[spatial.flatten(&spatial.cell_of(&point))] = true;
    }
}

/// Drop the first and last `ceil(discard_fraction * len)` points: the
/// shared approach and convergence segments every trajectory passes through.
pub fn central_trajectory_selector(
    traj: &Trajectory,
    discard_fraction: f64,
) -> Result<Trajectory, MaskError> {
    if !(0.0..0.5).contains(&discard_fraction) {
        return Err(MaskError::InvalidFraction(discard_fraction));
    }
    let len = traj.len();
    let cut = (discard_fraction * len as f64).ceil() as usize;
    if 2 * cut >= len {
        return Err(MaskError::EmptySelection);
    }
    Ok(traj.segment(cut, len - cut))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::Demonstration;
    use crate::policy::TrajectorySource;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_2d(points: &[[f64; 2]]) -> Demonstration {
        let n = points.len();
        Demonstration::positive(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64 / (n - 1) as f64, p.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn grid_3x3() -> GridSpec {
        GridSpec::with_phase(5, vec![(0.0, 1.0), (0.0, 1.0)], vec![3, 3]).unwrap()
    }

    #[test]
    fn counts_match_hand_enumeration() {
        // Four hand-placed paths on a 3x3 spatial grid.
        let demos = DemoSet::new(vec![
            demo_2d(&[[0.1, 0.5], [0.9, 0.5]]),
            demo_2d(&[[0.1, 0.1], [0.9, 0.1]]),
            demo_2d(&[[0.1, 0.1], [0.1, 0.9], [0.9, 0.9]]),
            demo_2d(&[[0.1, 0.5], [0.9, 0.5]]),
        ])
        .unwrap();
        let mask = build_mask(&demos, &grid_3x3(), 0.5).unwrap();
        let spatial = mask.spatial_spec().clone();
        let count = |i: usize, j: usize| mask.counts()[spatial.flatten(&[i, j])];
        // Hand enumeration (x index, y index).
        assert_eq!(count(0, 0), 2); // d2 start, d3 start
        assert_eq!(count(1, 0), 1);
        assert_eq!(count(2, 0), 1);
        assert_eq!(count(0, 1), 3); // d1, d4, d3 vertical leg
        assert_eq!(count(1, 1), 2);
        assert_eq!(count(2, 1), 2);
        assert_eq!(count(0, 2), 1);
        assert_eq!(count(1, 2), 1);
        assert_eq!(count(2, 2), 1);
        // threshold 0.5 of 4 demos: protected only where count > 2.
        for i in 0..3 {
            for j in 0..3 {
                let expected = if count(i, j) > 2 { 0 } else { 1 };
                assert_eq!(mask.bits()[spatial.flatten(&[i, j])], expected);
            }
        }
    }

    #[test]
    fn single_demo_masks_its_whole_path() {
        let demos = DemoSet::new(vec![demo_2d(&[[0.1, 0.5], [0.9, 0.5]])]).unwrap();
        let mask = build_mask(&demos, &grid_3x3(), 0.5).unwrap();
        let spatial = mask.spatial_spec().clone();
        for i in 0..3 {
            for j in 0..3 {
                let traversed = j == 1;
                let expected = if traversed { 0 } else { 1 };
                assert_eq!(
                    mask.bits()[spatial.flatten(&[i, j])],
                    expected,
                    "cell ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn thirty_block_consensus_layout() {
        // 6x5 = 30 spatial blocks, threshold 50%, two route classes around
        // the central obstacle: shared funnels protected, divergent mid-course
        // cells open.
        let task = crate::env::make_simple_task();
        let spec = GridSpec::with_phase(10, task.bounds().to_vec(), vec![6, 5]).unwrap();
        let mut demos = crate::env::synth_demos(&task, "over", 4, 0.01, 5).unwrap();
        for d in crate::env::synth_demos(&task, "under", 4, 0.01, 6)
            .unwrap()
            .demos()
        {
            demos.push(d.clone()).unwrap();
        }
        let mask = build_mask(&demos, &spec, 0.5).unwrap();
        let spatial = mask.spatial_spec().clone();
        // Start funnel: every demo begins at the exact start point.
        let start_cell = spatial.cell_of(task.start());
        assert_eq!(mask.bits()[spatial.flatten(&start_cell)], 0);
        let goal_cell = spatial.cell_of(task.goal());
        assert_eq!(mask.bits()[spatial.flatten(&goal_cell)], 0);
        // Mid-course: the over and under corridors each carry only half the
        // demos, which does not exceed the 50% threshold.
        let over_mid = spatial.cell_of(&[0.5, 0.85]);
        let under_mid = spatial.cell_of(&[0.5, 0.15]);
        assert_eq!(mask.bits()[spatial.flatten(&over_mid)], 1);
        assert_eq!(mask.bits()[spatial.flatten(&under_mid)], 1);
    }

    fn random_demos(rng: &mut ChaCha8Rng, n: usize) -> DemoSet {
        let demos = (0..n)
            .map(|_| {
                let pts: Vec<[f64; 2]> = (0..4)
                    .map(|_| [rng.gen::<f64>() * 0.98 + 0.01, rng.gen::<f64>() * 0.98 + 0.01])
                    .collect();
                demo_2d(&pts)
            })
            .collect();
        DemoSet::new(demos).unwrap()
    }

    #[test]
    fn threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = GridSpec::with_phase(5, vec![(0.0, 1.0), (0.0, 1.0)], vec![8, 8]).unwrap();
        for _ in 0..10 {
            let demos = random_demos(&mut rng, 6);
            let low = build_mask(&demos, &spec, 0.25).unwrap();
            let high = build_mask(&demos, &spec, 0.75).unwrap();
            for (l, h) in low.bits().iter().zip(high.bits()) {
                // Raising the threshold can only open cells (0 -> 1).
                assert!(h >= l);
            }
        }
    }

    #[test]
    fn order_independence_and_universal_traversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = GridSpec::with_phase(5, vec![(0.0, 1.0), (0.0, 1.0)], vec![8, 8]).unwrap();
        let demos = random_demos(&mut rng, 5);
        let mut reversed: Vec<Demonstration> = demos.demos().to_vec();
        reversed.reverse();
        let reversed = DemoSet::new(reversed).unwrap();
        let a = build_mask(&demos, &spec, 0.5).unwrap();
        let b = build_mask(&reversed, &spec, 0.5).unwrap();
        assert_eq!(a.bits(), b.bits());
        assert_eq!(a.counts(), b.counts());
        // Any cell traversed by every demo is protected for thresholds < 1.
        let c = build_mask(&demos, &spec, 0.999).unwrap();
        for (i, &count) in c.counts().iter().enumerate() {
            if count as usize == demos.len() {
                assert_eq!(c.bits()[i], 0);
            }
        }
    }

    #[test]
    fn central_selector_arithmetic() {
        let make = |n: usize| {
            Trajectory::new(
                (0..n)
                    .map(|i| (i as f64 / (n - 1) as f64, vec![0.0, 0.0]))
                    .collect(),
                TrajectorySource::Rollout,
            )
        };
        // 60 points, one sixth: ten cut from each end, keeping [10, 50).
        let seg = central_trajectory_selector(&make(60), 1.0 / 6.0).unwrap();
        assert_eq!(seg.len(), 40);
        assert_eq!(seg.points()[0].0, 10.0 / 59.0);
        // Fraction 0 is the identity.
        let id = central_trajectory_selector(&make(60), 0.0).unwrap();
        assert_eq!(id.len(), 60);
        // 7 points: ceil(7/6) = 2 cut each end, 3 remain.
        let small = central_trajectory_selector(&make(7), 1.0 / 6.0).unwrap();
        assert_eq!(small.len(), 3);
        // Nothing remains.
        assert!(matches!(
            central_trajectory_selector(&make(4), 0.49),
            Err(MaskError::EmptySelection)
        ));
        assert!(matches!(
            central_trajectory_selector(&make(10), 0.5),
            Err(MaskError::InvalidFraction(_))
        ));
    }

    #[test]
    fn permissive_mask_allows_everything() {
        let spec = grid_3x3();
        let mask = Mask::permissive(spec.spatial());
        assert!(mask.bits().iter().all(|&b| b == 1));
        assert!(mask.to_text().starts_with("mask v1"));
    }

    #[test]
    fn invalid_inputs() {
        let demos = DemoSet::new(vec![demo_2d(&[[0.1, 0.5], [0.9, 0.5]])]).unwrap();
        assert!(matches!(
            build_mask(&demos, &grid_3x3(), 0.0),
            Err(MaskError::InvalidThreshold(_))
        ));
        assert!(matches!(
            build_mask(&demos, &grid_3x3(), 1.5),
            Err(MaskError::InvalidThreshold(_))
        ));
        assert!(matches!(
            build_mask(&DemoSet::empty(), &grid_3x3(), 0.5),
            Err(MaskError::NoPositiveDemos)
        ));
    }
}
