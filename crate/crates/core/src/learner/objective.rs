//! The combined per-batch training objective and its exact gradients.
//!
//! A step is split in two stages so the gradient path can be checked against
//! finite differences:
//!
//! 1. [`prepare_step`] computes everything the objective treats as constant —
//!    TD targets, advantages, clipped importance ratios, replay weights, and
//!    the drawn state perturbations — and keeps the forward tapes it already
//!    produced for reuse.
//! 2. [`objective_value`] evaluates the scalar objective for given networks
//!    under a frozen plan; [`objective_gradients`] accumulates the analytic
//!    gradients of exactly that scalar.
//!
//! Gradients flow through every network branch the losses touch (both the
//! state and the perturbed-state evaluations); the constants do not carry
//! gradients by construction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{GradientSet, MlpNetwork, Tape};
use crate::policy::{
    hellinger_sq, hellinger_sq_grad, log_prob, log_prob_grad, map_net_output,
    map_net_output_backward,
};
use crate::replay::Transition;

use super::{
    clipped_importance_ratio, sample_neighbor_state, td_target, transition_distance, CapsConfig,
    L2c2Config, LearnerError, Mode,
};

/// Immutable view of everything the objective needs besides the networks.
#[derive(Clone, Copy)]
pub struct ObjectiveSettings<'a> {
    pub mode: Mode,
    pub caps: &'a CapsConfig,
    pub l2c2: &'a L2c2Config,
    pub gamma: f64,
    pub clip_ratio: Option<f64>,
    pub action_bound: f64,
}

impl ObjectiveSettings<'_> {
    fn caps_active(&self) -> bool {
        self.mode == Mode::Caps
            && (self.caps.lambda_temporal != 0.0 || self.caps.lambda_spatial != 0.0)
    }

    fn l2c2_active(&self) -> bool {
        self.mode == Mode::L2c2
            && (self.l2c2.lambda_policy != 0.0 || self.l2c2.lambda_value != 0.0)
    }
}

/// Per-batch loss components (batch means). `policy_reg` holds the CAPS or
/// L2C2 policy penalty depending on the mode; `value_reg` is only nonzero
/// under L2C2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub value: f64,
    pub policy: f64,
    pub policy_reg: f64,
    pub value_reg: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.value + self.policy + self.policy_reg + self.value_reg
    }

    pub fn all_finite(&self) -> bool {
        self.value.is_finite()
            && self.policy.is_finite()
            && self.policy_reg.is_finite()
            && self.value_reg.is_finite()
    }
}

/// Constants of one training step, frozen at preparation time.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub weights: Vec<f64>,
    pub td_targets: Vec<f64>,
    /// `y - V(s)` at preparation time; also the replay-priority errors.
    pub advantages: Vec<f64>,
    /// Clipped importance ratios, applied as constant coefficients.
    pub ratios: Vec<f64>,
    /// L2C2 perturbed states, one per transition (when active).
    pub neighbors: Option<Vec<Vec<f64>>>,
    /// L2C2 extended distances matching `neighbors`.
    pub distances: Option<Vec<f64>>,
    /// CAPS Gaussian-perturbed states (when active).
    pub caps_neighbors: Option<Vec<Vec<f64>>>,
}

/// Forward tapes kept from preparation for gradient reuse.
pub struct StepForwards {
    pi_s: Vec<Tape>,
    v_s: Vec<Tape>,
}

/// Reusable buffers for one agent's training steps.
pub struct StepScratch {
    pub grad_policy: GradientSet,
    pub grad_value: GradientSet,
    tape_a: Tape,
    tape_b: Tape,
}

impl StepScratch {
    pub fn new(policy: &MlpNetwork, value: &MlpNetwork) -> Self {
        StepScratch {
            grad_policy: policy.gradients(),
            grad_value: value.gradients(),
            tape_a: Tape::default(),
            tape_b: Tape::default(),
        }
    }
}

/// Computes the frozen constants of one step and retains the forward tapes.
///
/// Draws from `rng` (regularizer stream) only when the active mode has a
/// nonzero gain, so zero-gain runs consume exactly the streams a vanilla run
/// does.
pub fn prepare_step(
    policy: &MlpNetwork,
    value: &MlpNetwork,
    target_value: &MlpNetwork,
    transitions: &[Transition],
    weights: &[f64],
    settings: &ObjectiveSettings,
    rng: &mut impl Rng,
) -> Result<(StepPlan, StepForwards), LearnerError> {
    debug_assert_eq!(transitions.len(), weights.len());
    let n = transitions.len();
    let mut pi_s = Vec::with_capacity(n);
    let mut v_s = Vec::with_capacity(n);
    let mut td_targets = Vec::with_capacity(n);
    let mut advantages = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    let mut target_tape = Tape::default();

    for t in transitions {
        let mut tape_pi = Tape::default();
        policy.forward_into(&t.obs, &mut tape_pi)?;
        let p = map_net_output(&tape_pi.output, settings.action_bound)?;
        let log_density = log_prob(&p, &t.action);
        ratios.push(clipped_importance_ratio(
            log_density,
            t.behavior_log_density,
            settings.clip_ratio,
        ));
        pi_s.push(tape_pi);

        let mut tape_v = Tape::default();
        value.forward_into(&t.obs, &mut tape_v)?;
        let v_mean = mean(&tape_v.output);
        v_s.push(tape_v);

        target_value.forward_into(&t.next_obs, &mut target_tape)?;
        let v_next = mean(&target_tape.output);
        let y = td_target(t.reward, t.done, settings.gamma, v_next);
        td_targets.push(y);
        advantages.push(y - v_mean);
    }

    let (neighbors, distances) = if settings.l2c2_active() {
        let mut ns = Vec::with_capacity(n);
        let mut ds = Vec::with_capacity(n);
        for t in transitions {
            let s_tilde = sample_neighbor_state(&t.obs, &t.next_obs, settings.l2c2, rng);
            ds.push(transition_distance(
                &t.obs,
                &s_tilde,
                &t.next_obs,
                settings.l2c2.epsilon,
            ));
            ns.push(s_tilde);
        }
        (Some(ns), Some(ds))
    } else {
        (None, None)
    };

    let caps_neighbors = if settings.caps_active() {
        let sigma = settings.caps.sigma;
        Some(
            transitions
                .iter()
                .map(|t| {
                    t.obs
                        .iter()
                        .map(|&v| {
                            let z: f64 = StandardNormal.sample(rng);
                            v + sigma * z
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };

    Ok((
        StepPlan {
            weights: weights.to_vec(),
            td_targets,
            advantages,
            ratios,
            neighbors,
            distances,
            caps_neighbors,
        },
        StepForwards { pi_s, v_s },
    ))
}

#[inline]
fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Evaluates the combined objective for the given networks under a frozen
/// plan. Pure; used directly by finite-difference checks.
pub fn objective_value(
    policy: &MlpNetwork,
    value: &MlpNetwork,
    transitions: &[Transition],
    plan: &StepPlan,
    settings: &ObjectiveSettings,
) -> Result<LossTerms, LearnerError> {
    let n = transitions.len();
    let inv_n = 1.0 / n as f64;
    let mut terms = LossTerms::default();
    let mut tape = Tape::default();
    let mut tape2 = Tape::default();

    for (i, t) in transitions.iter().enumerate() {
        policy.forward_into(&t.obs, &mut tape)?;
        let p_s = map_net_output(&tape.output, settings.action_bound)?;
        let log_density = log_prob(&p_s, &t.action);
        terms.policy +=
            -plan.weights[i] * plan.advantages[i] * plan.ratios[i] * log_density * inv_n;

        value.forward_into(&t.obs, &mut tape2)?;
        let heads_s = tape2.output.clone();
        let v_mean = mean(&heads_s);
        let err = plan.td_targets[i] - v_mean;
        terms.value += plan.weights[i] * 0.5 * err * err * inv_n;

        if let Some(caps_neighbors) = &plan.caps_neighbors {
            let caps = settings.caps;
            if caps.lambda_temporal != 0.0 {
                policy.forward_into(&t.next_obs, &mut tape2)?;
                let p_next = map_net_output(&tape2.output, settings.action_bound)?;
                terms.policy_reg += caps.lambda_temporal
                    * 0.5
                    * sq_dist(&p_s.mean, &p_next.mean)
                    * inv_n;
            }
            if caps.lambda_spatial != 0.0 {
                policy.forward_into(&caps_neighbors[i], &mut tape2)?;
                let p_noisy = map_net_output(&tape2.output, settings.action_bound)?;
                terms.policy_reg +=
                    caps.lambda_spatial * 0.5 * sq_dist(&p_s.mean, &p_noisy.mean) * inv_n;
            }
        }

        if let (Some(neighbors), Some(distances)) = (&plan.neighbors, &plan.distances) {
            let l2c2 = settings.l2c2;
            let d = distances[i];
            if l2c2.lambda_policy != 0.0 {
                policy.forward_into(&neighbors[i], &mut tape2)?;
                let p_tilde = map_net_output(&tape2.output, settings.action_bound)?;
                terms.policy_reg +=
                    l2c2.lambda_policy * hellinger_sq(&p_s, &p_tilde) / d * inv_n;
            }
            if l2c2.lambda_value != 0.0 {
                value.forward_into(&neighbors[i], &mut tape2)?;
                terms.value_reg +=
                    l2c2.lambda_value * 0.5 * sq_dist(&heads_s, &tape2.output) / d * inv_n;
            }
        }
    }
    Ok(terms)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Accumulates exact gradients of [`objective_value`] into
/// `scratch.grad_policy` / `scratch.grad_value` (zeroed first) and returns the
/// loss terms. Reuses the tapes recorded by [`prepare_step`].
pub fn objective_gradients(
    policy: &MlpNetwork,
    value: &MlpNetwork,
    transitions: &[Transition],
    plan: &StepPlan,
    forwards: &StepForwards,
    settings: &ObjectiveSettings,
    scratch: &mut StepScratch,
) -> Result<LossTerms, LearnerError> {
    let n = transitions.len();
    let inv_n = 1.0 / n as f64;
    let mut terms = LossTerms::default();
    scratch.grad_policy.zero();
    scratch.grad_value.zero();

    for (i, t) in transitions.iter().enumerate() {
        let tape_pi_s = &forwards.pi_s[i];
        let raw_s = tape_pi_s.output.clone();
        let p_s = map_net_output(&raw_s, settings.action_bound)?;
        let action_dim = p_s.dim();
        let mut d_mean_s = vec![0.0; action_dim];
        let mut d_std_s = vec![0.0; action_dim];
        let zero_std = vec![0.0; action_dim];

        // Advantage-weighted log-likelihood.
        let log_density = log_prob(&p_s, &t.action);
        let coeff = -plan.weights[i] * plan.advantages[i] * plan.ratios[i] * inv_n;
        terms.policy += coeff * log_density;
        let (dm, ds) = log_prob_grad(&p_s, &t.action);
        for k in 0..action_dim {
            d_mean_s[k] += coeff * dm[k];
            d_std_s[k] += coeff * ds[k];
        }

        // TD value loss on the head mean.
        let tape_v_s = &forwards.v_s[i];
        let heads_s = tape_v_s.output.clone();
        let v_mean = mean(&heads_s);
        let err = plan.td_targets[i] - v_mean;
        terms.value += plan.weights[i] * 0.5 * err * err * inv_n;
        let head_coeff = plan.weights[i] * (v_mean - plan.td_targets[i]) * inv_n
            / heads_s.len() as f64;
        let mut d_heads_s = vec![head_coeff; heads_s.len()];

        if let Some(caps_neighbors) = &plan.caps_neighbors {
            let caps = settings.caps;
            if caps.lambda_temporal != 0.0 {
                policy.forward_into(&t.next_obs, &mut scratch.tape_a)?;
                let raw_next = scratch.tape_a.output.clone();
                let p_next = map_net_output(&raw_next, settings.action_bound)?;
                terms.policy_reg +=
                    caps.lambda_temporal * 0.5 * sq_dist(&p_s.mean, &p_next.mean) * inv_n;
                let g = caps.lambda_temporal * inv_n;
                let mut d_mean_next = vec![0.0; action_dim];
                for k in 0..action_dim {
                    let diff = p_s.mean[k] - p_next.mean[k];
                    d_mean_s[k] += g * diff;
                    d_mean_next[k] = -g * diff;
                }
                let d_raw = map_net_output_backward(
                    &raw_next,
                    settings.action_bound,
                    &d_mean_next,
                    &zero_std,
                );
                policy.backward(&scratch.tape_a, &d_raw, &mut scratch.grad_policy)?;
            }
            if caps.lambda_spatial != 0.0 {
                policy.forward_into(&caps_neighbors[i], &mut scratch.tape_a)?;
                let raw_noisy = scratch.tape_a.output.clone();
                let p_noisy = map_net_output(&raw_noisy, settings.action_bound)?;
                terms.policy_reg +=
                    caps.lambda_spatial * 0.5 * sq_dist(&p_s.mean, &p_noisy.mean) * inv_n;
                let g = caps.lambda_spatial * inv_n;
                let mut d_mean_noisy = vec![0.0; action_dim];
                for k in 0..action_dim {
                    let diff = p_s.mean[k] - p_noisy.mean[k];
                    d_mean_s[k] += g * diff;
                    d_mean_noisy[k] = -g * diff;
                }
                let d_raw = map_net_output_backward(
                    &raw_noisy,
                    settings.action_bound,
                    &d_mean_noisy,
                    &zero_std,
                );
                policy.backward(&scratch.tape_a, &d_raw, &mut scratch.grad_policy)?;
            }
        }

        if let (Some(neighbors), Some(distances)) = (&plan.neighbors, &plan.distances) {
            let l2c2 = settings.l2c2;
            let d = distances[i];
            if l2c2.lambda_policy != 0.0 {
                policy.forward_into(&neighbors[i], &mut scratch.tape_a)?;
                let raw_tilde = scratch.tape_a.output.clone();
                let p_tilde = map_net_output(&raw_tilde, settings.action_bound)?;
                terms.policy_reg += l2c2.lambda_policy * hellinger_sq(&p_s, &p_tilde) / d * inv_n;
                let g = l2c2.lambda_policy / d * inv_n;
                let (dm1, ds1, dm2, ds2) = hellinger_sq_grad(&p_s, &p_tilde);
                let mut d_mean_tilde = vec![0.0; action_dim];
                let mut d_std_tilde = vec![0.0; action_dim];
                for k in 0..action_dim {
                    d_mean_s[k] += g * dm1[k];
                    d_std_s[k] += g * ds1[k];
                    d_mean_tilde[k] = g * dm2[k];
                    d_std_tilde[k] = g * ds2[k];
                }
                let d_raw = map_net_output_backward(
                    &raw_tilde,
                    settings.action_bound,
                    &d_mean_tilde,
                    &d_std_tilde,
                );
                policy.backward(&scratch.tape_a, &d_raw, &mut scratch.grad_policy)?;
            }
            if l2c2.lambda_value != 0.0 {
                value.forward_into(&neighbors[i], &mut scratch.tape_b)?;
                let heads_tilde = &scratch.tape_b.output;
                terms.value_reg +=
                    l2c2.lambda_value * 0.5 * sq_dist(&heads_s, heads_tilde) / d * inv_n;
                let g = l2c2.lambda_value / d * inv_n;
                let mut d_heads_tilde = vec![0.0; heads_s.len()];
                for k in 0..heads_s.len() {
                    let diff = heads_s[k] - heads_tilde[k];
                    d_heads_s[k] += g * diff;
                    d_heads_tilde[k] = -g * diff;
                }
                value.backward(&scratch.tape_b, &d_heads_tilde, &mut scratch.grad_value)?;
            }
        }

        let d_raw_s =
            map_net_output_backward(&raw_s, settings.action_bound, &d_mean_s, &d_std_s);
        policy.backward(tape_pi_s, &d_raw_s, &mut scratch.grad_policy)?;
        value.backward(tape_v_s, &d_heads_s, &mut scratch.grad_value)?;
    }
    Ok(terms)
}
