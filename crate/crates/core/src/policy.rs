//! Diagonal-Gaussian action distributions.
//!
//! The policy network's raw output is split into a mean head (tanh-squashed
//! to the action bounds) and a standard-deviation head (softplus, clamped).
//! Alongside sampling and log-densities this module provides the squared
//! Hellinger distance between two policies — in closed form for the training
//! path, and as an importance-sampled Monte-Carlo estimate kept around as a
//! statistical oracle.
//!
//! All functions here are pure; the ones that sample take caller-owned
//! generators.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Clamp bounds for the policy standard deviation. The floor prevents the
/// log-density from blowing up, the ceiling keeps exploration bounded.
pub const STD_FLOOR: f64 = 1e-3;
pub const STD_CEIL: f64 = 1.5;

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("raw head length {got} is not twice the action dim {action_dim}")]
    BadHeadLength { got: usize, action_dim: usize },
    #[error("dimension mismatch between distributions or actions")]
    DimensionMismatch,
}

/// Per-state parameters of a diagonal-Gaussian action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput {
    /// Mean action, already inside the action bounds.
    pub mean: Vec<f64>,
    /// Per-dimension standard deviation, in `[STD_FLOOR, STD_CEIL]`.
    pub std: Vec<f64>,
}

impl GaussianPolicyOutput {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One sampled action plus its log-density under the sampling distribution.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_density: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    // Stable for large |x|.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw network head of length `2 * action_dim` to distribution
/// parameters: `mean = bound * tanh(raw_mean)`, `std = clamp(softplus(raw_std))`.
pub fn map_net_output(raw: &[f64], action_bound: f64) -> Result<GaussianPolicyOutput, PolicyError> {
    if raw.len() % 2 != 0 || raw.is_empty() {
        return Err(PolicyError::BadHeadLength {
            got: raw.len(),
            action_dim: raw.len() / 2,
        });
    }
    let dim = raw.len() / 2;
    let mean = raw[..dim].iter().map(|&r| action_bound * r.tanh()).collect();
    let std = raw[dim..]
        .iter()
        .map(|&r| softplus(r).clamp(STD_FLOOR, STD_CEIL))
        .collect();
    Ok(GaussianPolicyOutput { mean, std })
}

/// Pulls a loss gradient w.r.t. `(mean, std)` back to the raw network head.
/// Clamped std dimensions pass no gradient.
pub fn map_net_output_backward(
    raw: &[f64],
    action_bound: f64,
    d_mean: &[f64],
    d_std: &[f64],
) -> Vec<f64> {
    let dim = raw.len() / 2;
    debug_assert_eq!(d_mean.len(), dim);
    debug_assert_eq!(d_std.len(), dim);
    let mut d_raw = vec![0.0; raw.len()];
    for i in 0..dim {
        let t = raw[i].tanh();
        d_raw[i] = d_mean[i] * action_bound * (1.0 - t * t);
        let sp = softplus(raw[dim + i]);
        if sp > STD_FLOOR && sp < STD_CEIL {
            d_raw[dim + i] = d_std[i] * sigmoid(raw[dim + i]);
        }
    }
    d_raw
}

/// Draws `a = mean + std * z` with `z` standard normal, reporting the exact
/// log-density of the draw.
pub fn sample(p: &GaussianPolicyOutput, rng: &mut impl Rng) -> ActionSample {
    let action: Vec<f64> = p
        .mean
        .iter()
        .zip(p.std.iter())
        .map(|(&m, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s * z
        })
        .collect();
    let log_density = log_prob(p, &action);
    ActionSample { action, log_density }
}

/// Exact diagonal-Gaussian log-density of `a`.
pub fn log_prob(p: &GaussianPolicyOutput, a: &[f64]) -> f64 {
    debug_assert_eq!(p.dim(), a.len());
    let mut lp = 0.0;
    for ((&m, &s), &x) in p.mean.iter().zip(p.std.iter()).zip(a.iter()) {
        let z = (x - m) / s;
        lp += -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
    }
    lp
}

/// Gradient of [`log_prob`] w.r.t. `(mean, std)`.
pub fn log_prob_grad(p: &GaussianPolicyOutput, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = vec![0.0; p.dim()];
    let mut d_std = vec![0.0; p.dim()];
    for i in 0..p.dim() {
        let s = p.std[i];
        let diff = a[i] - p.mean[i];
        d_mean[i] = diff / (s * s);
        d_std[i] = diff * diff / (s * s * s) - 1.0 / s;
    }
    (d_mean, d_std)
}

/// Squared Hellinger distance between two diagonal Gaussians, in closed form:
/// `1 - prod_i sqrt(2 s1 s2 / (s1^2 + s2^2)) * exp(-(m1-m2)^2 / (4 (s1^2+s2^2)))`.
/// Always in `[0, 1]`.
pub fn hellinger_sq(p1: &GaussianPolicyOutput, p2: &GaussianPolicyOutput) -> f64 {
    debug_assert_eq!(p1.dim(), p2.dim());
    1.0 - bhattacharyya_coefficient(p1, p2)
}

#[inline]
fn bhattacharyya_coefficient(p1: &GaussianPolicyOutput, p2: &GaussianPolicyOutput) -> f64 {
    // Work in log space so high dimensions stay stable.
    let mut log_bc = 0.0;
    for i in 0..p1.dim() {
        let (s1, s2) = (p1.std[i], p2.std[i]);
        let sum_var = s1 * s1 + s2 * s2;
        let diff = p1.mean[i] - p2.mean[i];
        log_bc += 0.5 * (2.0 * s1 * s2 / sum_var).ln() - 0.25 * diff * diff / sum_var;
    }
    log_bc.exp()
}

/// Gradient of [`hellinger_sq`] w.r.t. both distributions' `(mean, std)`.
/// Returns `(d_mean1, d_std1, d_mean2, d_std2)`.
pub fn hellinger_sq_grad(
    p1: &GaussianPolicyOutput,
    p2: &GaussianPolicyOutput,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = p1.dim();
    let bc = bhattacharyya_coefficient(p1, p2);
    let mut d_m1 = vec![0.0; dim];
    let mut d_s1 = vec![0.0; dim];
    let mut d_m2 = vec![0.0; dim];
    let mut d_s2 = vec![0.0; dim];
    for i in 0..dim {
        let (s1, s2) = (p1.std[i], p2.std[i]);
        let sum_var = s1 * s1 + s2 * s2;
        let diff = p1.mean[i] - p2.mean[i];
        // d(hellinger)/dx = -bc * d(log_bc)/dx
        d_m1[i] = bc * 0.5 * diff / sum_var;
        d_m2[i] = -d_m1[i];
        d_s1[i] = -bc
            * (0.5 / s1 - s1 / sum_var + 0.25 * diff * diff * 2.0 * s1 / (sum_var * sum_var));
        d_s2[i] = -bc
            * (0.5 / s2 - s2 / sum_var + 0.25 * diff * diff * 2.0 * s2 / (sum_var * sum_var));
    }
    (d_m1, d_s1, d_m2, d_s2)
}

/// Importance-sampled Monte-Carlo estimate of the squared Hellinger distance,
/// using the equal-weight mixture of `p1` and `p2` as the proposal. Unbiased;
/// kept as the statistical oracle for [`hellinger_sq`].
pub fn hellinger_sq_mc(
    p1: &GaussianPolicyOutput,
    p2: &GaussianPolicyOutput,
    n: usize,
    rng: &mut impl Rng,
) -> f64 {
    hellinger_sq_mc_stats(p1, p2, n, rng).0
}

/// Monte-Carlo estimate plus its standard error.
pub fn hellinger_sq_mc_stats(
    p1: &GaussianPolicyOutput,
    p2: &GaussianPolicyOutput,
    n: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    assert!(n >= 1);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let from_first = rng.random::<f64>() < 0.5;
        let x = if from_first {
            sample(p1, rng).action
        } else {
            sample(p2, rng).action
        };
        let l1 = log_prob(p1, &x);
        let l2 = log_prob(p2, &x);
        let q = 0.5 * (l1.exp() + l2.exp());
        let integrand = {
            let d = (0.5 * l1).exp() - (0.5 * l2).exp();
            0.5 * d * d
        };
        let f = integrand / q;
        sum += f;
        sum_sq += f * f;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = (var / n as f64).sqrt();
    (mean, se)
}
