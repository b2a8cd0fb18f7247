//! Native continuous-control environments with additive white observation
//! noise.
//!
//! Two tasks are provided:
//!
//! - `pendulum-swingup`: torque-limited rod pendulum. The torque bound is far
//!   below the gravity torque at the horizontal, so the controller has to pump
//!   energy before it can balance — the policy must switch behaviors.
//! - `point-reacher`: a damped 2-D point mass accelerating toward a random
//!   goal; the episode ends early on capture.
//!
//! The agent only ever sees noisy observations; the underlying true state is
//! exposed separately for diagnostics and tests. Dynamics and observation
//! noise consume independent seeded streams, so the true trajectory is a
//! function of `(seed, action sequence)` alone.

mod pendulum;
mod reacher;

pub use pendulum::Pendulum;
pub use reacher::PointReacher;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment id `{0}`")]
    UnknownId(String),
    #[error("episode is already done; call reset")]
    EpisodeDone,
    #[error("action has dimension {got}, expected {expected}")]
    BadActionDim { expected: usize, got: usize },
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    /// Stable identifier used in config files and CLI flags.
    pub id: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Actions live in `[-action_bound, action_bound]` per dimension.
    pub action_bound: f64,
    pub max_steps: usize,
    /// Standard deviation of the additive Gaussian observation noise.
    pub noise_scale: f64,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Draws a fresh initial state (deterministic in `seed`) and returns the
    /// first noisy observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances the true dynamics by one control step. The caller is expected
    /// to clip actions to the bounds; out-of-range values are clipped again
    /// defensively.
    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError>;

    /// Noise-free observation of the current true state.
    fn observe_true(&self) -> Vec<f64>;
}

/// Specs of every available environment.
pub fn env_catalog() -> Vec<EnvSpec> {
    vec![Pendulum::spec_default(), PointReacher::spec_default()]
}

/// Instantiates an environment by its stable id.
pub fn make_env(id: &str) -> Result<Box<dyn Environment>, EnvError> {
    make_env_with_noise(id, None)
}

/// Same as [`make_env`] but overrides the observation-noise scale.
pub fn make_env_with_noise(
    id: &str,
    noise_scale: Option<f64>,
) -> Result<Box<dyn Environment>, EnvError> {
    match id {
        pendulum::ID => Ok(Box::new(Pendulum::new(noise_scale))),
        reacher::ID => Ok(Box::new(PointReacher::new(noise_scale))),
        other => Err(EnvError::UnknownId(other.to_string())),
    }
}
