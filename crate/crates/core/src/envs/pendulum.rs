//! Torque-limited pendulum swing-up.
//!
//! A uniform rod of mass `m` and length `l`, pivoted at one end; the angle
//! `theta` is measured from the upright position. Dynamics:
//!
//! ```text
//! theta_dd = (3 g / (2 l)) sin(theta) + 3 u / (m l^2)
//! ```
//!
//! Integrated with semi-implicit Euler. Each control step covers `DT = 0.05 s`
//! and is split into `SUBSTEPS` internal integrator substeps, which keeps the
//! mechanical-energy drift of the untorqued pendulum well under 1% across an
//! episode. The torque bound (|u| <= 2) is below the gravity torque at the
//! horizontal (m g l / 2 ~ 4.9), so swinging up requires pumping.
//!
//! Observation: `[cos(theta), sin(theta), theta_dot]` plus white noise.
//! Reward: `cos(theta) - TORQUE_COST * u^2`, maximal upright.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::stream_rng;

use super::{EnvError, EnvSpec, Environment, StepResult};

pub(super) const ID: &str = "pendulum-swingup";

pub const DT: f64 = 0.05;
const SUBSTEPS: usize = 32;
const GRAVITY: f64 = 9.81;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const TORQUE_COST: f64 = 0.001;
const MAX_STEPS: usize = 200;
const DEFAULT_NOISE: f64 = 0.01;

pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    done: bool,
    noise_rng: ChaCha12Rng,
}

impl Pendulum {
    pub fn new(noise_scale: Option<f64>) -> Self {
        let mut spec = Self::spec_default();
        if let Some(scale) = noise_scale {
            spec.noise_scale = scale;
        }
        Pendulum {
            spec,
            theta: PI,
            theta_dot: 0.0,
            steps: 0,
            done: false,
            noise_rng: stream_rng(0, 0),
        }
    }

    pub fn spec_default() -> EnvSpec {
        EnvSpec {
            id: ID,
            obs_dim: 3,
            action_dim: 1,
            action_bound: MAX_TORQUE,
            max_steps: MAX_STEPS,
            noise_scale: DEFAULT_NOISE,
        }
    }

    /// Mechanical energy of the rod (kinetic + potential about the pivot).
    pub fn energy(&self) -> f64 {
        let inertia = MASS * LENGTH * LENGTH / 3.0;
        0.5 * inertia * self.theta_dot * self.theta_dot
            + MASS * GRAVITY * (LENGTH / 2.0) * self.theta.cos()
    }

    /// True `(theta, theta_dot)` for diagnostics.
    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn noisy(&mut self, obs: Vec<f64>) -> Vec<f64> {
        let scale = self.spec.noise_scale;
        if scale == 0.0 {
            return obs;
        }
        obs.into_iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut self.noise_rng);
                v + scale * z
            })
            .collect()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut init_rng = stream_rng(seed, 1);
        self.noise_rng = stream_rng(seed, 2);
        // theta uniform over (-pi, pi], theta_dot uniform over (-1, 1).
        self.theta = PI - 2.0 * PI * init_rng.random::<f64>();
        self.theta_dot = 2.0 * init_rng.random::<f64>() - 1.0;
        self.steps = 0;
        self.done = false;
        let obs = self.observe_true();
        self.noisy(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 1 {
            return Err(EnvError::BadActionDim {
                expected: 1,
                got: action.len(),
            });
        }
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let reward = self.theta.cos() - TORQUE_COST * u * u;

        let h = DT / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            let accel =
                (3.0 * GRAVITY / (2.0 * LENGTH)) * self.theta.sin() + 3.0 * u / (MASS * LENGTH * LENGTH);
            self.theta_dot = (self.theta_dot + accel * h).clamp(-MAX_SPEED, MAX_SPEED);
            self.theta += self.theta_dot * h;
        }
        self.steps += 1;
        self.done = self.steps >= MAX_STEPS;

        let obs = self.observe_true();
        Ok(StepResult {
            observation: self.noisy(obs),
            reward,
            done: self.done,
        })
    }

    fn observe_true(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}
