//! Continuous 2-D point mass that must end the episode on a goal.
//!
//! State `[px, py, vx, vy]`, action a force in `[-1, 1]^2`. Dynamics are a
//! velocity-damped point mass: `v' = damping * v + a * dt`, `p' = p + v' * dt`.
//! The only nonzero reward is paid on the final step and equals
//! `exp(-||p_final - goal||_2)`. Out-of-range forces are rejected, never
//! clamped.

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, Space, SpaceElement, Step};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Half-width of the uniform jitter added to the start position.
    pub start_noise: f64,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    pub discount: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0],
            goal: [1.0, 1.0],
            start_noise: 0.05,
            horizon: 50,
            dt: 0.1,
            damping: 0.9,
            discount: 0.99,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointMassEnv {
    cfg: PointMassConfig,
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
}

impl PointMassEnv {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || !(0.0..=1.0).contains(&cfg.damping) || cfg.start_noise < 0.0 {
            return Err(Error::InvalidArgument("bad point-mass dynamics".into()));
        }
        let spec = EnvSpec::new(
            Space::continuous_box(4, f64::NEG_INFINITY, f64::INFINITY),
            Space::continuous_box(2, -1.0, 1.0),
            cfg.horizon,
            cfg.discount,
        )?;
        Ok(Self {
            pos: cfg.start,
            vel: [0.0; 2],
            t: 0,
            cfg,
            spec,
        })
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.cfg
    }

    pub fn distance_to_goal(&self) -> f64 {
        (self.pos[0] - self.cfg.goal[0]).hypot(self.pos[1] - self.cfg.goal[1])
    }

    /// `exp(-distance)`; in `(0, 1]` and equal to 1 only on the goal.
    pub fn terminal_reward(distance: f64) -> f64 {
        (-distance).exp()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    /// Places the mass at `pos` with velocity `vel` (test and analysis hook).
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }
}

impl Environment for PointMassEnv {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        let w = self.cfg.start_noise;
        self.pos = self.cfg.start.map(|p| {
            if w > 0.0 {
                p + rng.random_range(-w..=w)
            } else {
                p
            }
        });
        self.vel = [0.0; 2];
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &Vec<f64>) -> Result<Step<Vec<f64>>> {
        action.check_in(&self.spec.action)?;
        if self.t == self.cfg.horizon {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        for ((v, p), a) in self.vel.iter_mut().zip(&mut self.pos).zip(action) {
            *v = self.cfg.damping * *v + a * self.cfg.dt;
            *p += *v * self.cfg.dt;
        }
        self.t += 1;
        let last = self.t == self.cfg.horizon;
        let reward = if last {
            Self::terminal_reward(self.distance_to_goal())
        } else {
            0.0
        };
        Ok(Step {
            next_state: self.observation(),
            reward,
            terminal: false,
            truncated: last,
        })
    }
}
