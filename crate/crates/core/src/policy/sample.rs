//! Trajectory generation from a policy grid.
//!
//! Both modes walk the grid phase slice by phase slice under a continuity
//! restriction: each step may move at most `continuity` cells (Chebyshev
//! distance on spatial indices) from the previous cell. Without it, slicewise
//! sampling would produce teleporting paths no environment could execute.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GridDistribution, PolicyError, Trajectory, TrajectorySource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Sample each slice's restricted conditional distribution.
    Stochastic,
    /// Most-probable path by dynamic programming; ties resolve to the
    /// lexicographically smallest cell-index sequence.
    Argmax,
}

/// Restart budget for stochastic dead ends.
const DEADEND_RESTARTS: usize = 10;

/// Generate one trajectory from the policy.
///
/// Points are emitted at cell centers, one per phase slice. Stochastic mode
/// is deterministic given `seed`; argmax ignores the seed entirely.
pub fn sample_trajectory(
    policy: &GridDistribution,
    mode: SampleMode,
    continuity: usize,
    seed: u64,
) -> Result<Trajectory, PolicyError> {
    if !policy.is_normalized() {
        return Err(PolicyError::NotNormalized);
    }
    if continuity == 0 {
        return Err(PolicyError::InvalidContinuity);
    }
    match mode {
        SampleMode::Stochastic => sample_stochastic(policy, continuity, seed),
        SampleMode::Argmax => sample_argmax(policy, continuity),
    }
}

/// Iterate spatial flat indices within Chebyshev `radius` of `center`
/// (multi-index), in increasing flat-index order.
fn for_each_neighbor(
    cells: &[usize],
    center: &[usize],
    radius: usize,
    mut f: impl FnMut(usize),
) {
    let dim = cells.len();
    let mut lo = vec![0usize; dim];
    let mut hi = vec![0usize; dim];
    for d in 0..dim {
        lo[d] = center[d].saturating_sub(radius);
        hi[d] = (center[d] + radius).min(cells[d] - 1);
    }
    let mut idx = lo.clone();
    loop {
        let mut flat = 0;
        for d in 0..dim {
            flat = flat * cells[d] + idx[d];
        }
        f(flat);
        // Odometer increment within the box.
        let mut d = dim;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if idx[d] < hi[d] {
                idx[d] += 1;
                idx[(d + 1)..dim].copy_from_slice(&lo[(d + 1)..dim]);
                break;
            }
        }
    }
}

fn build_trajectory(policy: &GridDistribution, path: &[usize]) -> Trajectory {
    let spec = policy.spec();
    let spatial = spec.spatial();
    let points = path
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let multi = spatial.unflatten(s);
            (spec.center(0, t), spatial.cell_center(&multi))
        })
        .collect();
    Trajectory::new(points, TrajectorySource::Rollout)
}

fn sample_stochastic(
    policy: &GridDistribution,
    continuity: usize,
    seed: u64,
) -> Result<Trajectory, PolicyError> {
    let spec = policy.spec();
    let spatial = spec.spatial();
    let phases = spec.phase_cells();
    let mut last_partial: Vec<usize> = Vec::new();
    let mut last_phase = 0;
    for attempt in 0..DEADEND_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut path: Vec<usize> = Vec::with_capacity(phases);
        let mut dead = false;
        for t in 0..phases {
            let slice = policy.phase_slice(t);
            let chosen = if let Some(&prev) = path.last() {
                let center = spatial.unflatten(prev);
                let mut total = 0.0;
                for_each_neighbor(spatial.cells(), &center, continuity, |i| {
                    total += slice[i];
                });
                if total <= 0.0 {
                    None
                } else {
                    let target = rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for_each_neighbor(spatial.cells(), &center, continuity, |i| {
                        if pick.is_none() {
                            acc += slice[i];
                            if acc >= target {
                                pick = Some(i);
                            }
                        }
                    });
                    // Guard against accumulated rounding on the final cell.
                    pick.or_else(|| {
                        let mut fallback = None;
                        for_each_neighbor(spatial.cells(), &center, continuity, |i| {
                            if slice[i] > 0.0 {
                                fallback = Some(i);
                            }
                        });
                        fallback
                    })
                }
            } else {
                let total: f64 = slice.iter().sum();
                if total <= 0.0 {
                    None
                } else {
                    let target = rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, &v) in slice.iter().enumerate() {
                        acc += v;
                        if acc >= target {
                            pick = Some(i);
                            break;
                        }
                    }
                    pick.or_else(|| (0..slice.len()).rev().find(|&i| slice[i] > 0.0))
                }
            };
            match chosen {
                Some(c) => path.push(c),
                None => {
                    dead = true;
                    last_partial = path.clone();
                    last_phase = t;
                    break;
                }
            }
        }
        if !dead {
            return Ok(build_trajectory(policy, &path));
        }
    }
    Err(PolicyError::DeadEnd {
        phase: last_phase,
        restarts: DEADEND_RESTARTS,
        partial: Box::new(build_trajectory(policy, &last_partial)),
    })
}

fn sample_argmax(policy: &GridDistribution, continuity: usize) -> Result<Trajectory, PolicyError> {
    let spec = policy.spec();
    let spatial = spec.spatial();
    let cells = spatial.cells().to_vec();
    let phases = spec.phase_cells();
    let s_len = spatial.len();

    // Backward value function: score[t][s] = log pi_t(s) + best continuation.
    // log(0) = -inf marks unusable cells.
    let mut score = vec![f64::NEG_INFINITY; phases * s_len];
    for (s, slot) in score[(phases - 1) * s_len..].iter_mut().enumerate() {
        *slot = policy.phase_slice(phases - 1)[s].ln();
    }
    for t in (0..phases - 1).rev() {
        let (head, tail) = score.split_at_mut((t + 1) * s_len);
        let next = &tail[..s_len];
        let slice = policy.phase_slice(t);
        for s in 0..s_len {
            let p = slice[s];
            if p <= 0.0 {
                continue;
            }
            let center = spatial.unflatten(s);
            let mut best = f64::NEG_INFINITY;
            for_each_neighbor(&cells, &center, continuity, |i| {
                if next[i] > best {
                    best = next[i];
                }
            });
            head[t * s_len + s] = p.ln() + best;
        }
    }

    // Forward reconstruction, choosing the smallest index among exact ties:
    // the lexicographically smallest optimal path.
    let mut path = Vec::with_capacity(phases);
    let mut best = f64::NEG_INFINITY;
    let mut first = None;
    for (s, &v) in score[..s_len].iter().enumerate() {
        if v > best {
            best = v;
            first = Some(s);
        }
    }
    let first = match first {
        Some(s) if best.is_finite() => s,
        _ => {
            return Err(PolicyError::DeadEnd {
                phase: 0,
                restarts: 0,
                partial: Box::new(build_trajectory(policy, &[])),
            })
        }
    };
    path.push(first);
    for t in 1..phases {
        let center = spatial.unflatten(*path.last().unwrap());
        let mut best = f64::NEG_INFINITY;
        let mut pick = None;
        for_each_neighbor(&cells, &center, continuity, |i| {
            if score[t * s_len + i] > best {
                best = score[t * s_len + i];
                pick = Some(i);
            }
        });
        match pick {
            Some(s) if best.is_finite() => path.push(s),
            _ => {
                return Err(PolicyError::DeadEnd {
                    phase: t,
                    restarts: 0,
                    partial: Box::new(build_trajectory(policy, &path)),
                })
            }
        }
    }
    Ok(build_trajectory(policy, &path))
}
