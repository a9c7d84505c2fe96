//! Discretized policies and the negative-learning update rules.

mod grid;
mod sample;
mod trajectory;
mod update;

use thiserror::Error;

use crate::gmm::GmmError;

pub use grid::{GridDistribution, GridSpec};
pub use sample::{sample_trajectory, SampleMode};
pub use trajectory::{Trajectory, TrajectorySource};
pub use update::{
    combine_positive, moe_apply_negative, neg_weight_refit, poe_apply_negative,
    poe_apply_sequence, uniform, AvoidanceSet,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("grid specs do not match")]
    SpecMismatch,
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("distribution has zero total mass")]
    ZeroMass,
    #[error("at least one policy required")]
    EmptyInput,
    #[error("distribution must be normalized")]
    NotNormalized,
    #[error("mixture weight must lie strictly between 0 and 1, got {0}")]
    InvalidMix(f64),
    #[error("negative weight must be <= 0, got {0}")]
    InvalidNegWeight(f64),
    #[error("refit requires at least one positive demonstration")]
    NoPositiveDemos,
    #[error("continuity radius must be at least 1")]
    InvalidContinuity,
    #[error("dead end at phase slice {phase} after {restarts} restarts")]
    DeadEnd {
        phase: usize,
        restarts: usize,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Gmm(#[from] GmmError),
}
