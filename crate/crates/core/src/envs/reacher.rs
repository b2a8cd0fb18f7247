//! Damped 2-D point mass reaching a random goal.
//!
//! The action is a bounded acceleration. Dynamics per integrator substep:
//!
//! ```text
//! vel += (u - DRAG * vel) * h
//! pos += vel * h
//! ```
//!
//! Observation: `[goal - pos (2), vel (2)]` plus white noise. Reward:
//! `-|goal - pos| - ACTION_COST * |u|^2`. The episode ends early (terminal)
//! when the mass is within `CAPTURE_RADIUS` of the goal, otherwise at
//! `MAX_STEPS` (time limit).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::stream_rng;

use super::{EnvError, EnvSpec, Environment, StepResult};

pub(super) const ID: &str = "point-reacher";

pub const DT: f64 = 0.05;
const SUBSTEPS: usize = 4;
const DRAG: f64 = 0.25;
const MAX_ACCEL: f64 = 1.0;
const ACTION_COST: f64 = 0.001;
const CAPTURE_RADIUS: f64 = 0.05;
const MAX_STEPS: usize = 150;
const DEFAULT_NOISE: f64 = 0.01;

pub struct PointReacher {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
    noise_rng: ChaCha12Rng,
}

impl PointReacher {
    pub fn new(noise_scale: Option<f64>) -> Self {
        let mut spec = Self::spec_default();
        if let Some(scale) = noise_scale {
            spec.noise_scale = scale;
        }
        PointReacher {
            spec,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            done: false,
            noise_rng: stream_rng(0, 0),
        }
    }

    pub fn spec_default() -> EnvSpec {
        EnvSpec {
            id: ID,
            obs_dim: 4,
            action_dim: 2,
            action_bound: MAX_ACCEL,
            max_steps: MAX_STEPS,
            noise_scale: DEFAULT_NOISE,
        }
    }

    fn distance(&self) -> f64 {
        let dx = self.goal[0] - self.pos[0];
        let dy = self.goal[1] - self.pos[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// True `(pos, vel, goal)` for diagnostics.
    pub fn state(&self) -> ([f64; 2], [f64; 2], [f64; 2]) {
        (self.pos, self.vel, self.goal)
    }

    #[cfg(test)]
    pub(crate) fn place(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
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

impl Environment for PointReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut init_rng = stream_rng(seed, 1);
        self.noise_rng = stream_rng(seed, 2);
        for i in 0..2 {
            self.pos[i] = 2.0 * init_rng.random::<f64>() - 1.0;
        }
        for i in 0..2 {
            self.goal[i] = 2.0 * init_rng.random::<f64>() - 1.0;
        }
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        let obs = self.observe_true();
        self.noisy(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 2 {
            return Err(EnvError::BadActionDim {
                expected: 2,
                got: action.len(),
            });
        }
        let u = [
            action[0].clamp(-MAX_ACCEL, MAX_ACCEL),
            action[1].clamp(-MAX_ACCEL, MAX_ACCEL),
        ];
        let reward = -self.distance() - ACTION_COST * (u[0] * u[0] + u[1] * u[1]);

        let h = DT / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            for i in 0..2 {
                self.vel[i] += (u[i] - DRAG * self.vel[i]) * h;
                self.pos[i] += self.vel[i] * h;
            }
        }
        self.steps += 1;
        let captured = self.distance() < CAPTURE_RADIUS;
        self.done = captured || self.steps >= MAX_STEPS;

        let obs = self.observe_true();
        Ok(StepResult {
            observation: self.noisy(obs),
            reward,
            done: self.done,
        })
    }

    fn observe_true(&self) -> Vec<f64> {
        vec![
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
            self.vel[0],
            self.vel[1],
        ]
    }
}
