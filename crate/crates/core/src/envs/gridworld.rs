//! Grid-world with a distance-to-goal reward.
//!
//! Cells are indexed `y * width + x`; `(0, 0)` is the bottom-left corner and
//! `Up` increases `y`. Moves into a wall leave the agent in place.
//!
//! - `Episodic` mode pays `-distance(final cell, goal)` on the last step of
//!   the episode and zero elsewhere.
//! - `Dense` mode pays `-distance(next cell, goal)` on every step, so its
//!   final-step reward coincides with the episodic payout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, Space, SpaceElement, Step};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Dense,
    Episodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub horizon: usize,
    pub reward_mode: RewardMode,
    pub metric: DistanceMetric,
    pub discount: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 50,
            height: 50,
            start: (0, 0),
            goal: (49, 49),
            horizon: 150,
            reward_mode: RewardMode::Episodic,
            metric: DistanceMetric::Euclidean,
            discount: 0.9,
        }
    }
}

impl GridConfig {
    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn distance_to_goal(&self, (x, y): (usize, usize)) -> f64 {
        let dx = x.abs_diff(self.goal.0) as f64;
        let dy = y.abs_diff(self.goal.1) as f64;
        match self.metric {
            DistanceMetric::Euclidean => dx.hypot(dy),
            DistanceMetric::Manhattan => dx + dy,
        }
    }

    /// Deterministic 4-neighborhood move with wall no-ops.
    pub fn moved(&self, (x, y): (usize, usize), action: usize) -> Result<(usize, usize)> {
        Ok(match action {
            UP => (x, (y + 1).min(self.height - 1)),
            DOWN => (x, y.saturating_sub(1)),
            LEFT => (x.saturating_sub(1), y),
            RIGHT => ((x + 1).min(self.width - 1), y),
            _ => {
                return Err(Error::ActionOutOfBounds {
                    action: action.to_string(),
                    space: "Discrete(4)".into(),
                })
            }
        })
    }

    /// Best achievable episodic return: minus the distance from the goal
    /// to the closest cell reachable within the horizon.
    pub fn optimal_return(&self) -> f64 {
        let mut best = f64::INFINITY;
        for y in 0..self.height {
            for x in 0..self.width {
                let steps = x.abs_diff(self.start.0) + y.abs_diff(self.start.1);
                if steps <= self.horizon {
                    best = best.min(self.distance_to_goal((x, y)));
                }
            }
        }
        -best
    }

    fn validate(&self) -> Result<()> {
        let inside = |(x, y): (usize, usize)| x < self.width && y < self.height;
        if self.width == 0 || self.height == 0 || !inside(self.start) || !inside(self.goal) {
            return Err(Error::InvalidArgument(
                "grid start and goal must lie inside a nonempty grid".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    cfg: GridConfig,
    spec: EnvSpec,
    pos: (usize, usize),
    t: usize,
}

impl GridWorld {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec::new(
            Space::Discrete { n: cfg.n_states() },
            Space::Discrete { n: N_ACTIONS },
            cfg.horizon,
            cfg.discount,
        )?;
        let pos = cfg.start;
        Ok(Self {
            cfg,
            spec,
            pos,
            t: 0,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }
}

impl Environment for GridWorld {
    type State = usize;
    type Action = usize;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> usize {
        self.pos = self.cfg.start;
        self.t = 0;
        self.cfg.index(self.pos)
    }

    fn step(&mut self, action: &usize) -> Result<Step<usize>> {
        action.check_in(&self.spec.action)?;
        if self.t == self.cfg.horizon {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        self.pos = self.cfg.moved(self.pos, *action)?;
        self.t += 1;
        let last = self.t == self.cfg.horizon;
        let reward = match self.cfg.reward_mode {
            RewardMode::Dense => -self.cfg.distance_to_goal(self.pos),
            RewardMode::Episodic if last => -self.cfg.distance_to_goal(self.pos),
            RewardMode::Episodic => 0.0,
        };
        Ok(Step {
            next_state: self.cfg.index(self.pos),
            reward,
            terminal: false,
            truncated: last,
        })
    }
}
