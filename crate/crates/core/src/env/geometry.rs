//! Canonical task geometry, frozen so benchmark results are reproducible.
//!
//! All tasks live in unit workspaces. Coordinates here are the single source
//! of truth for the benchmark environments; change them only together with a
//! version bump.

use super::{Aabb, Behavior, EnvError, TaskSpec};

/// Bumped whenever any constant in this file changes.
pub const GEOMETRY_VERSION: u32 = 1;

// Shared 2D layout: travel left to right across a unit square.
const START_2D: [f64; 2] = [0.05, 0.5];
const GOAL_2D: [f64; 2] = [0.95, 0.5];
/// Two cell widths at the default 12-cell spatial resolution.
const GOAL_TOL_2D: f64 = 2.0 / 12.0;

fn behavior(name: &str, waypoints: &[[f64; 2]]) -> Behavior {
    Behavior {
        name: name.to_string(),
        waypoints: waypoints.iter().map(|w| w.to_vec()).collect(),
    }
}

fn behavior3(name: &str, waypoints: &[[f64; 3]]) -> Behavior {
    Behavior {
        name: name.to_string(),
        waypoints: waypoints.iter().map(|w| w.to_vec()).collect(),
    }
}

/// One central rectangular obstacle between start and goal; two ways around
/// it. Ambiguity 2.
pub fn make_simple_task() -> TaskSpec {
    let obstacle = Aabb::new(vec![0.35, 0.25], vec![0.65, 0.75]).expect("static geometry");
    // Shared straight lead-out and approach segments keep the two modes
    // identical near the endpoints; they diverge only around the obstacle.
    let over = behavior(
        "over",
        &[
            START_2D,
            [0.25, 0.5],
            [0.33, 0.82],
            [0.5, 0.87],
            [0.68, 0.82],
            [0.8, 0.55],
            GOAL_2D,
        ],
    );
    let under = behavior(
        "under",
        &[
            START_2D,
            [0.25, 0.5],
            [0.33, 0.18],
            [0.5, 0.13],
            [0.68, 0.18],
            [0.8, 0.45],
            GOAL_2D,
        ],
    );
    TaskSpec::new(
        "simple",
        vec![(0.0, 1.0), (0.0, 1.0)],
        START_2D.to_vec(),
        GOAL_2D.to_vec(),
        GOAL_TOL_2D,
        vec![obstacle],
        vec![over, under],
    )
    .expect("static geometry is valid")
}

// Slalom walls: two vertical obstacle rows with gaps. Row 1 has five gaps
// (a-e), row 2 has four (a-d); a route picks one gap from each row.
const ROW1_X: (f64, f64) = (0.30, 0.40);
const ROW2_X: (f64, f64) = (0.60, 0.70);
const ROW1_GAPS: [(f64, f64); 5] = [
    (0.0, 0.1),
    (0.225, 0.325),
    (0.45, 0.55),
    (0.675, 0.775),
    (0.9, 1.0),
];
const ROW2_GAPS_4: [(f64, f64); 4] = [(0.0, 0.1), (0.3, 0.4), (0.6, 0.7), (0.9, 1.0)];
/// Five-gap second row used by the 25-behavior variant.
const ROW2_GAPS_5: [(f64, f64); 5] = ROW1_GAPS;

const GAP_NAMES: [&str; 5] = ["a", "b", "c", "d", "e"];

fn wall_obstacles(x: (f64, f64), gaps: &[(f64, f64)]) -> Vec<Aabb> {
    // Obstacles fill the wall between consecutive gaps.
    let mut out = Vec::new();
    for pair in gaps.windows(2) {
        let lo = pair[0].1;
        let hi = pair[1].0;
        out.push(Aabb::new(vec![x.0, lo], vec![x.1, hi]).expect("static geometry"));
    }
    out
}

/// Two-row slalom course. The default second row has four gaps, giving
/// 5 x 4 = 20 gap-pair behaviors.
pub fn make_slalom_task() -> TaskSpec {
    make_slalom_task_with(4).expect("default slalom geometry is valid")
}

/// Slalom with a 4- or 5-gap second row (20 or 25 behaviors).
pub fn make_slalom_task_with(second_row_gaps: usize) -> Result<TaskSpec, EnvError> {
    let row2: &[(f64, f64)] = match second_row_gaps {
        4 => &ROW2_GAPS_4,
        5 => &ROW2_GAPS_5,
        n => {
            return Err(EnvError::InvalidTask(format!(
                "second slalom row supports 4 or 5 gaps, got {n}"
            )))
        }
    };
    let mut obstacles = wall_obstacles(ROW1_X, &ROW1_GAPS);
    obstacles.extend(wall_obstacles(ROW2_X, row2));

    let mut behaviors = Vec::new();
    for (i, g1) in ROW1_GAPS.iter().enumerate() {
        for (j, g2) in row2.iter().enumerate() {
            let y1 = 0.5 * (g1.0 + g1.1);
            let y2 = 0.5 * (g2.0 + g2.1);
            behaviors.push(behavior(
                &format!("{}-{}", GAP_NAMES[i], GAP_NAMES[j]),
                &[
                    START_2D,
                    [0.25, y1],
                    [0.45, y1],
                    [0.55, y2],
                    [0.75, y2],
                    GOAL_2D,
                ],
            ));
        }
    }
    TaskSpec::new(
        "slalom",
        vec![(0.0, 1.0), (0.0, 1.0)],
        START_2D.to_vec(),
        GOAL_2D.to_vec(),
        GOAL_TOL_2D,
        obstacles,
        behaviors,
    )
}

// 3D pick-and-place analogue: a box roughly one third of the start-goal
// distance sits on the direct path; routes go left, right, or over it.
const START_3D: [f64; 3] = [0.1, 0.5, 0.1];
const GOAL_3D: [f64; 3] = [0.9, 0.5, 0.1];
/// Two cell widths at the default 20-cell spatial resolution.
const GOAL_TOL_3D: f64 = 2.0 / 20.0;
const BOX_MIN: [f64; 3] = [0.35, 0.35, 0.0];
const BOX_MAX: [f64; 3] = [0.65, 0.65, 0.3];

/// Three-behavior 3D task. Ambiguity 3.
pub fn make_pickplace3d_task() -> TaskSpec {
    make_pickplace3d_task_with_margin(0.0).expect("static geometry is valid")
}

/// 3D task with the obstacle inflated by `margin` on every face, standing in
/// for end-effector width.
pub fn make_pickplace3d_task_with_margin(margin: f64) -> Result<TaskSpec, EnvError> {
    let obstacle = Aabb::new(BOX_MIN.to_vec(), BOX_MAX.to_vec())
        .expect("static geometry")
        .inflate(margin);
    let left = behavior3(
        "left",
        &[
            START_3D,
            [0.3, 0.22, 0.15],
            [0.5, 0.18, 0.18],
            [0.7, 0.22, 0.15],
            GOAL_3D,
        ],
    );
    let right = behavior3(
        "right",
        &[
            START_3D,
            [0.3, 0.78, 0.15],
            [0.5, 0.82, 0.18],
            [0.7, 0.78, 0.15],
            GOAL_3D,
        ],
    );
    let over = behavior3(
        "over",
        &[
            START_3D,
            [0.3, 0.5, 0.42],
            [0.5, 0.5, 0.5],
            [0.7, 0.5, 0.42],
            GOAL_3D,
        ],
    );
    TaskSpec::new(
        "pickplace3d",
        vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
        START_3D.to_vec(),
        GOAL_3D.to_vec(),
        GOAL_TOL_3D,
        vec![obstacle],
        vec![left, right, over],
    )
}
