//! Building blocks for a small actor-critic training stack aimed at studying
//! policy/value smoothness regularization on noisy continuous-control toys.
//!
//! The crate is organized around five subsystems:
//!
//! - [`nn`]: hand-rolled MLPs (layer normalization + Squish activation) with
//!   exact reverse-mode gradients and an Adam optimizer.
//! - [`policy`]: diagonal-Gaussian action distributions — sampling,
//!   log-densities, and the squared Hellinger distance between two policies.
//! - [`envs`]: native control environments (pendulum swing-up, point reacher)
//!   with additive white observation noise.
//! - [`replay`]: a proportional prioritized replay buffer with
//!   importance-sampling weights.
//! - [`learner`]: the training step itself — TD targets, policy/value losses,
//!   the CAPS and L2C2 regularizers, target-network maintenance, and agent
//!   checkpoints.
//!
//! Everything is `f64`, single-threaded per agent, and deterministic given
//! caller-owned seeded generators.

pub mod envs;
pub mod learner;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod rng;

pub use envs::{EnvSpec, Environment, StepResult};
pub use learner::{Agent, AgentConfig, CapsConfig, L2c2Config, LossTerms, Mode, ValueEnsemble};
pub use nn::{GradientSet, MlpNetwork, OptimizerState, Tape};
pub use policy::{ActionSample, GaussianPolicyOutput};
pub use replay::{PerBuffer, Transition};
