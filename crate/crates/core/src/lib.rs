//! Negative-feedback imitation learning for ambiguous trajectory tasks.
//!
//! Policies are discretized probability distributions learned from
//! demonstrations via Gaussian mixtures. Failed rollouts become avoidance
//! distributions that a masked product-of-experts update folds back into the
//! policy, so the system learns from its own mistakes without re-learning
//! from the stored dataset.
//!
//! Module map:
//! - [`gmm`]: weighted EM fitting, phase conditioning, grid rasterization.
//! - [`policy`]: grid distributions, the product/mixture/negative-weight
//!   update rules, and trajectory sampling.
//! - [`mask`]: consensus masking that protects demonstrated regions from
//!   negative feedback.
//! - [`env`]: the simulated tasks, synthetic demonstrations, and rollout
//!   classification.
//! - [`feedback`]: the negative-feedback cycle orchestrator.
//! - [`bench`]: the experiment harness behind the CLI.

pub mod bench;
pub mod env;
pub mod feedback;
pub mod gmm;
pub mod mask;
pub mod policy;

pub use env::{EnvError, Outcome, OutcomeKind, TaskSpec};
pub use feedback::{CycleRecord, FeedbackConfig, FeedbackError, Method, Selector};
pub use gmm::{DemoSet, Demonstration, GaussianMixture, GmmError};
pub use mask::{Mask, MaskError};
pub use policy::{
    AvoidanceSet, GridDistribution, GridSpec, PolicyError, SampleMode, Trajectory,
};
