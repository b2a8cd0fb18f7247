//! The actor-critic training step and its smoothness regularizers.
//!
//! One [`Agent`] owns a policy network, a value network (five heads sharing a
//! body, mean-aggregated), their slowly updated target copies, and the two
//! Adam states. `train_step` draws a prioritized batch, builds the combined
//! objective for the configured mode, backpropagates through every branch,
//! applies one optimizer step per network, refreshes replay priorities from
//! the TD errors, and Polyak-updates the targets.
//!
//! Three modes are supported:
//!
//! - `vanilla`: TD value loss plus advantage-weighted negative log-likelihood.
//! - `caps`: adds constant-gain penalties on the policy mean between
//!   temporally adjacent states and Gaussian-perturbed states.
//! - `l2c2`: adds distance-weighted penalties tied to the transition geometry.
//!   The perturbed state is drawn inside a box spanned by the actual state
//!   travel, and the penalty gain `lambda / d` stays between the configured
//!   lower and upper bounds by construction of the distance offset `epsilon`.

mod checkpoint;
mod objective;

pub use checkpoint::AgentCheckpointError;
pub use objective::{
    objective_gradients, objective_value, prepare_step, LossTerms, ObjectiveSettings, StepPlan,
    StepScratch,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::envs::EnvSpec;
use crate::nn::{MlpNetwork, NnError, OptimizerState};
use crate::policy::{self, GaussianPolicyOutput, PolicyError};
use crate::replay::{PerBuffer, ReplayError};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite loss (value {value}, policy {policy}, policy_reg {policy_reg}, value_reg {value_reg})")]
    NonFiniteLoss {
        value: f64,
        policy: f64,
        policy_reg: f64,
        value_reg: f64,
    },
}

/// Training mode. The strings are stable identifiers used by config files
/// and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Vanilla,
    Caps,
    L2c2,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Vanilla => "vanilla",
            Mode::Caps => "caps",
            Mode::L2c2 => "l2c2",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "caps" => Ok(Mode::Caps),
            "l2c2" => Ok(Mode::L2c2),
            other => Err(format!("unknown mode `{other}` (expected vanilla|caps|l2c2)")),
        }
    }
}

/// Core agent hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Target-network Polyak rate.
    pub tau: f64,
    pub mode: Mode,
    /// Importance-ratio clip radius; `None` disables clipping.
    pub clip_ratio: Option<f64>,
    pub value_heads: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 0.1,
            mode: Mode::Vanilla,
            clip_ratio: Some(0.2),
            value_heads: 5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(LearnerError::BadConfig(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LearnerError::BadConfig(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if self.value_heads < 1 {
            return Err(LearnerError::BadConfig("value_heads must be >= 1".into()));
        }
        if let Some(c) = self.clip_ratio {
            if !(c > 0.0) {
                return Err(LearnerError::BadConfig(format!(
                    "clip_ratio must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Constant-gain smoothness penalty configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsConfig {
    /// Absolute std of the Gaussian state perturbation.
    pub sigma: f64,
    pub lambda_temporal: f64,
    pub lambda_spatial: f64,
}

impl Default for CapsConfig {
    fn default() -> Self {
        CapsConfig {
            sigma: 0.2,
            lambda_temporal: 0.01,
            lambda_spatial: 0.05,
        }
    }
}

impl CapsConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.sigma > 0.0) {
            return Err(LearnerError::BadConfig(format!(
                "caps sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.lambda_temporal < 0.0 || self.lambda_spatial < 0.0 {
            return Err(LearnerError::BadConfig(
                "caps gains must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Distance-weighted smoothness penalty configuration.
///
/// `epsilon`, `lambda_policy` and `lambda_value` are derived from the base
/// parameters so that the effective gain `lambda_policy / d` spans exactly
/// `[lambda_lower, lambda_upper]` over the sampling box.
#[derive(Debug, Clone, PartialEq)]
pub struct L2c2Config {
    /// Relative box size: the perturbed state may travel `sigma` times the
    /// distance of the observed transition, per dimension.
    pub sigma: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    /// Value-to-policy gain ratio.
    pub beta: f64,
    /// Distance offset guarding the division (derived).
    pub epsilon: f64,
    /// Base policy gain (derived).
    pub lambda_policy: f64,
    /// Base value gain (derived).
    pub lambda_value: f64,
}

impl L2c2Config {
    /// Derives the dependent quantities:
    /// `epsilon = sigma * lower / (upper - sigma * lower)`,
    /// `lambda_policy = upper * epsilon`, `lambda_value = beta * lambda_policy`.
    pub fn derive(
        sigma: f64,
        lambda_lower: f64,
        lambda_upper: f64,
        beta: f64,
    ) -> Result<Self, LearnerError> {
        if !(sigma > 0.0) {
            return Err(LearnerError::BadConfig(format!(
                "l2c2 sigma must be positive, got {sigma}"
            )));
        }
        if !(lambda_lower > 0.0) {
            return Err(LearnerError::BadConfig(format!(
                "l2c2 lambda_lower must be positive, got {lambda_lower}"
            )));
        }
        if !(lambda_upper > sigma * lambda_lower) {
            return Err(LearnerError::BadConfig(format!(
                "l2c2 requires lambda_upper > sigma * lambda_lower \
                 (got {lambda_upper} <= {sigma} * {lambda_lower})"
            )));
        }
        if beta < 0.0 {
            return Err(LearnerError::BadConfig(format!(
                "l2c2 beta must be non-negative, got {beta}"
            )));
        }
        let epsilon = sigma * lambda_lower / (lambda_upper - sigma * lambda_lower);
        let lambda_policy = lambda_upper * epsilon;
        let lambda_value = beta * lambda_policy;
        Ok(L2c2Config {
            sigma,
            lambda_lower,
            lambda_upper,
            beta,
            epsilon,
            lambda_policy,
            lambda_value,
        })
    }

    /// Forces the effective gains, e.g. to zero for ablation runs. The
    /// geometry (`sigma`, `epsilon`) is left untouched.
    pub fn with_gain_overrides(mut self, policy: Option<f64>, value: Option<f64>) -> Self {
        if let Some(p) = policy {
            self.lambda_policy = p;
        }
        if let Some(v) = value {
            self.lambda_value = v;
        }
        self
    }

    /// Half-width of the per-dimension sampling interval for the travel
    /// fraction `u`: `sigma + (sigma - 1) * epsilon`.
    pub fn neighbor_halfwidth(&self) -> f64 {
        self.sigma + (self.sigma - 1.0) * self.epsilon
    }
}

impl Default for L2c2Config {
    fn default() -> Self {
        L2c2Config::derive(1.0, 0.01, 1.0, 0.1).expect("default parameters are valid")
    }
}

/// Vector of value-head outputs for one state; the scalar value is their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEnsemble {
    heads: Vec<f64>,
}

impl ValueEnsemble {
    pub fn new(heads: Vec<f64>) -> Self {
        assert!(!heads.is_empty());
        ValueEnsemble { heads }
    }

    pub fn heads(&self) -> &[f64] {
        &self.heads
    }

    pub fn scalar(&self) -> f64 {
        self.heads.iter().sum::<f64>() / self.heads.len() as f64
    }
}

/// Draws the perturbed state inside the transition-spanned box:
/// `s~_j = s_j + (s'_j - s_j) * u_j` with `u_j` i.i.d. uniform on the
/// symmetric interval of half-width [`L2c2Config::neighbor_halfwidth`].
/// Dimensions the transition did not move stay fixed.
pub fn sample_neighbor_state(
    s: &[f64],
    s_next: &[f64],
    cfg: &L2c2Config,
    rng: &mut impl Rng,
) -> Vec<f64> {
    debug_assert_eq!(s.len(), s_next.len());
    let half = cfg.neighbor_halfwidth();
    s.iter()
        .zip(s_next.iter())
        .map(|(&a, &b)| {
            let u = (2.0 * rng.random::<f64>() - 1.0) * half;
            a + (b - a) * u
        })
        .collect()
}

/// Extended distance between `s` and `s~` relative to the travel `s -> s'`:
/// the max over dimensions of `|s~_j - s_j| / |s'_j - s_j|`, plus `epsilon`.
/// Dimensions with `s'_j = s_j` contribute zero (the sampler cannot move
/// them). Always `>= epsilon`.
pub fn transition_distance(s: &[f64], s_tilde: &[f64], s_next: &[f64], epsilon: f64) -> f64 {
    debug_assert_eq!(s.len(), s_tilde.len());
    debug_assert_eq!(s.len(), s_next.len());
    let mut worst = 0.0f64;
    for i in 0..s.len() {
        let span = s_next[i] - s[i];
        if span != 0.0 {
            worst = worst.max(((s_tilde[i] - s[i]) / span).abs());
        }
    }
    worst + epsilon
}

/// Distance-weighted penalty pair for one transition:
/// `(lambda_policy * hellinger_sq / d, lambda_value * 0.5 |V(s) - V(s~)|^2 / d)`.
pub fn l2c2_penalties(
    policy_at_s: &GaussianPolicyOutput,
    policy_at_tilde: &GaussianPolicyOutput,
    value_at_s: &[f64],
    value_at_tilde: &[f64],
    distance: f64,
    cfg: &L2c2Config,
) -> (f64, f64) {
    let policy_term =
        cfg.lambda_policy * policy::hellinger_sq(policy_at_s, policy_at_tilde) / distance;
    let sq: f64 = value_at_s
        .iter()
        .zip(value_at_tilde.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let value_term = cfg.lambda_value * 0.5 * sq / distance;
    (policy_term, value_term)
}

/// Constant-gain penalty for one transition:
/// `lambda_T * 0.5 |mu(s) - mu(s')|^2 + lambda_S * 0.5 |mu(s) - mu(s~)|^2`.
pub fn caps_penalty(
    mean_at_s: &[f64],
    mean_at_next: &[f64],
    mean_at_noisy: &[f64],
    cfg: &CapsConfig,
) -> f64 {
    let sq = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    cfg.lambda_temporal * 0.5 * sq(mean_at_s, mean_at_next)
        + cfg.lambda_spatial * 0.5 * sq(mean_at_s, mean_at_noisy)
}

/// TD target `y = r + gamma * (1 - done) * v_next`, with `v_next` the target
/// ensemble's scalar value at the next state.
pub fn td_target(reward: f64, done: bool, gamma: f64, v_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * v_next
    }
}

/// Weighted squared TD error: `weight * 0.5 * (y - v)^2`.
pub fn value_loss(td: f64, v: f64, weight: f64) -> f64 {
    weight * 0.5 * (td - v) * (td - v)
}

/// Advantage-weighted negative log-likelihood with an optional clipped
/// importance ratio: `-(weight * advantage * clip(ratio)) * log_density`.
/// The ratio acts as a constant coefficient; gradients flow through the
/// log-density only.
pub fn policy_loss(
    advantage: f64,
    log_density: f64,
    behavior_log_density: f64,
    clip_ratio: Option<f64>,
    weight: f64,
) -> f64 {
    let rho = clipped_importance_ratio(log_density, behavior_log_density, clip_ratio);
    -weight * advantage * rho * log_density
}

/// `exp(log_density - behavior_log_density)` clipped to `[1 - c, 1 + c]`.
/// The exponent is bounded so a collapsed policy cannot overflow to infinity.
pub fn clipped_importance_ratio(
    log_density: f64,
    behavior_log_density: f64,
    clip_ratio: Option<f64>,
) -> f64 {
    let ratio = (log_density - behavior_log_density).clamp(-60.0, 60.0).exp();
    match clip_ratio {
        Some(c) => ratio.clamp(1.0 - c, 1.0 + c),
        None => ratio,
    }
}

/// Polyak update of `target` toward `online`.
pub fn soft_update(
    target: &mut MlpNetwork,
    online: &MlpNetwork,
    tau: f64,
) -> Result<(), LearnerError> {
    target.soft_update_from(online, tau)?;
    Ok(())
}

/// Action decision from [`Agent::act`].
#[derive(Debug, Clone)]
pub struct Decision {
    /// Action clipped to the environment bounds.
    pub action: Vec<f64>,
    /// Log-density of `action` under the current policy.
    pub log_density: f64,
    /// Policy mean at the observation (used by the smoothness metric).
    pub mean: Vec<f64>,
}

/// One actor-critic learner: networks, targets, optimizer states.
pub struct Agent {
    cfg: AgentConfig,
    caps: CapsConfig,
    l2c2: L2c2Config,
    obs_dim: usize,
    action_dim: usize,
    action_bound: f64,
    policy: MlpNetwork,
    value: MlpNetwork,
    target_policy: MlpNetwork,
    target_value: MlpNetwork,
    opt_policy: OptimizerState,
    opt_value: OptimizerState,
    scratch: StepScratch,
}

impl Agent {
    /// Builds an agent with the full-size hidden layers.
    pub fn new(
        spec: &EnvSpec,
        cfg: AgentConfig,
        caps: CapsConfig,
        l2c2: L2c2Config,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        Self::with_hidden(
            spec,
            cfg,
            caps,
            l2c2,
            &[crate::nn::HIDDEN_WIDTH, crate::nn::HIDDEN_WIDTH],
            seed,
        )
    }

    /// Builds an agent with custom hidden widths (small nets for tests).
    pub fn with_hidden(
        spec: &EnvSpec,
        cfg: AgentConfig,
        caps: CapsConfig,
        l2c2: L2c2Config,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, LearnerError> {
        cfg.validate()?;
        caps.validate()?;
        let mut init_rng = stream_rng(seed, 0x6e65_7473);
        let mut policy_widths = vec![spec.obs_dim];
        policy_widths.extend_from_slice(hidden);
        policy_widths.push(2 * spec.action_dim);
        let mut policy = MlpNetwork::new(&policy_widths, &mut init_rng)?;
        // Start the action distribution near center with moderate spread.
        policy.scale_output_layer(0.01);

        let mut value_widths = vec![spec.obs_dim];
        value_widths.extend_from_slice(hidden);
        value_widths.push(cfg.value_heads);
        let value = MlpNetwork::new(&value_widths, &mut init_rng)?;

        let target_policy = policy.clone();
        let target_value = value.clone();
        let opt_policy = OptimizerState::new(&policy);
        let opt_value = OptimizerState::new(&value);
        let scratch = StepScratch::new(&policy, &value);
        Ok(Agent {
            cfg,
            caps,
            l2c2,
            obs_dim: spec.obs_dim,
            action_dim: spec.action_dim,
            action_bound: spec.action_bound,
            policy,
            value,
            target_policy,
            target_value,
            opt_policy,
            opt_value,
            scratch,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn caps_config(&self) -> &CapsConfig {
        &self.caps
    }

    pub fn l2c2_config(&self) -> &L2c2Config {
        &self.l2c2
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn policy_net(&self) -> &MlpNetwork {
        &self.policy
    }

    pub fn value_net(&self) -> &MlpNetwork {
        &self.value
    }

    pub fn target_policy_net(&self) -> &MlpNetwork {
        &self.target_policy
    }

    pub fn target_value_net(&self) -> &MlpNetwork {
        &self.target_value
    }

    /// Distribution parameters of the current policy at an observation.
    pub fn policy_at(&self, obs: &[f64]) -> Result<GaussianPolicyOutput, LearnerError> {
        let (raw, _) = self.policy.forward(obs)?;
        Ok(policy::map_net_output(&raw, self.action_bound)?)
    }

    /// Ensemble value of the current value network at an observation.
    pub fn value_at(&self, obs: &[f64]) -> Result<ValueEnsemble, LearnerError> {
        let (heads, _) = self.value.forward(obs)?;
        Ok(ValueEnsemble::new(heads))
    }

    /// Chooses an action. Deterministic mode returns the policy mean; the
    /// stochastic mode samples, clips to the bounds, and reports the
    /// log-density at the clipped action.
    pub fn act(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut impl Rng,
    ) -> Result<Decision, LearnerError> {
        let p = self.policy_at(obs)?;
        let bound = self.action_bound;
        let action: Vec<f64> = if deterministic {
            p.mean.iter().map(|m| m.clamp(-bound, bound)).collect()
        } else {
            policy::sample(&p, rng)
                .action
                .iter()
                .map(|a| a.clamp(-bound, bound))
                .collect()
        };
        let log_density = policy::log_prob(&p, &action);
        Ok(Decision {
            action,
            log_density,
            mean: p.mean,
        })
    }

    /// Objective view of this agent's configuration.
    pub fn settings(&self) -> ObjectiveSettings<'_> {
        ObjectiveSettings {
            mode: self.cfg.mode,
            caps: &self.caps,
            l2c2: &self.l2c2,
            gamma: self.cfg.gamma,
            clip_ratio: self.cfg.clip_ratio,
            action_bound: self.action_bound,
        }
    }

    /// One full training step on a prioritized batch. Consumes the replay
    /// stream first (batch draw), then the regularizer stream (state
    /// perturbations). Aborts with diagnostics on a non-finite loss.
    pub fn train_step(
        &mut self,
        buffer: &mut PerBuffer,
        replay_rng: &mut impl Rng,
        reg_rng: &mut impl Rng,
    ) -> Result<LossTerms, LearnerError> {
        let batch = buffer.sample_batch(replay_rng)?;
        // Built from disjoint field borrows so `scratch` stays available.
        let settings = ObjectiveSettings {
            mode: self.cfg.mode,
            caps: &self.caps,
            l2c2: &self.l2c2,
            gamma: self.cfg.gamma,
            clip_ratio: self.cfg.clip_ratio,
            action_bound: self.action_bound,
        };
        let (plan, forwards) = prepare_step(
            &self.policy,
            &self.value,
            &self.target_value,
            &batch.transitions,
            &batch.weights,
            &settings,
            reg_rng,
        )?;
        let terms = objective_gradients(
            &self.policy,
            &self.value,
            &batch.transitions,
            &plan,
            &forwards,
            &settings,
            &mut self.scratch,
        )?;
        if !terms.all_finite() {
            return Err(LearnerError::NonFiniteLoss {
                value: terms.value,
                policy: terms.policy,
                policy_reg: terms.policy_reg,
                value_reg: terms.value_reg,
            });
        }
        self.opt_policy.step(&mut self.policy, &self.scratch.grad_policy)?;
        self.opt_value.step(&mut self.value, &self.scratch.grad_value)?;

        let td_errors: Vec<f64> = plan.advantages.clone();
        buffer.update_priorities(&batch.indices, &td_errors)?;

        self.target_policy.soft_update_from(&self.policy, self.cfg.tau)?;
        self.target_value.soft_update_from(&self.value, self.cfg.tau)?;
        Ok(terms)
    }
}

#[cfg(test)]
mod tests;
