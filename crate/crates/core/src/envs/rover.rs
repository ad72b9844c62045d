//! Cooperative multi-rover domain.
//!
//! `N` rovers move in the unit square and try to harvest `K` points of
//! interest (POIs). A POI is harvested once at least `coupling` rovers are
//! simultaneously within `obs_radius` of it; harvesting latches. Each newly
//! harvested POI pays the team `+1`, and every rover within `obs_radius` of
//! a POI that was still unharvested at the start of the step earns
//! `local_reward`.
//!
//! Concrete choices:
//! - dynamics `v' = damping * v + a * dt`, `p' = clip(p + v' * dt, 0, 1)`
//!   with `dt = 0.1`, `damping = 0.9`; the coupling test runs after the move;
//! - POIs sit on a ring around the arena center at angles fixed by
//!   `layout_seed`, rovers start near the center with per-episode jitter;
//! - observation of rover `i` (length `2 * sectors + 2`): for each angular
//!   sector, the capped inverse distance to the nearest other rover, then the
//!   same for unharvested POIs, then the rover's own velocity. Sector `k` is
//!   centered on direction `k * 360 / sectors` degrees, counterclockwise from
//!   `+x`, so "due east" is the middle of sector 0. Objects beyond
//!   `sensor_range` are invisible.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, Space, SpaceElement, Step};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoverConfig {
    pub n_rovers: usize,
    pub n_pois: usize,
    pub coupling: usize,
    pub obs_radius: f64,
    pub sensor_range: f64,
    pub sectors: usize,
    pub inverse_distance_cap: f64,
    pub local_reward: f64,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    /// Inner and outer radius of the ring the POIs are placed on.
    pub poi_ring: (f64, f64),
    pub start_jitter: f64,
    pub layout_seed: u64,
    pub discount: f64,
}

impl Default for RoverConfig {
    fn default() -> Self {
        Self::for_coupling(1)
    }
}

impl RoverConfig {
    /// Instance sizes per coupling: 1 -> 3 POIs / 3 rovers, 2 -> 4 / 4,
    /// 3 -> 4 / 6, 4 -> 4 / 8.
    pub fn for_coupling(coupling: usize) -> Self {
        let (n_pois, n_rovers) = match coupling {
            0 | 1 => (3, 3),
            2 => (4, 4),
            3 => (4, 6),
            _ => (4, 8),
        };
        Self {
            n_rovers,
            n_pois,
            coupling: coupling.max(1),
            obs_radius: 0.1,
            sensor_range: 0.5,
            sectors: 8,
            inverse_distance_cap: 10.0,
            local_reward: 0.05,
            horizon: 100,
            dt: 0.1,
            damping: 0.9,
            poi_ring: (0.2, 0.35),
            start_jitter: 0.05,
            layout_seed: 0,
            discount: 0.99,
        }
    }

    pub fn observation_dim(&self) -> usize {
        2 * self.sectors + 2
    }

    fn validate(&self) -> Result<()> {
        if self.n_rovers == 0 || self.n_pois == 0 || self.coupling == 0 || self.sectors == 0 {
            return Err(Error::InvalidArgument(
                "rover domain needs rovers, POIs, sectors and coupling >= 1".into(),
            ));
        }
        if !(self.obs_radius > 0.0 && self.sensor_range > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "rover radii and dt must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoverState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub pois: Vec<[f64; 2]>,
    pub harvested: Vec<bool>,
    pub t: usize,
}

impl RoverState {
    pub fn harvest_fraction(&self) -> f64 {
        self.harvested.iter().filter(|&&h| h).count() as f64 / self.harvested.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoverOutcome {
    pub team_reward: f64,
    pub local_rewards: Vec<f64>,
    pub terminal: bool,
}

/// Sector containing direction `(dx, dy)`.
pub fn sector_of(dx: f64, dy: f64, sectors: usize) -> usize {
    let width = TAU / sectors as f64;
    let angle = dy.atan2(dx).rem_euclid(TAU);
    (((angle + width / 2.0) / width).floor() as usize) % sectors
}

/// Sensor reading of rover `index`.
pub fn rover_sense(state: &RoverState, cfg: &RoverConfig, index: usize) -> Vec<f64> {
    let k = cfg.sectors;
    let mut obs = vec![0.0; 2 * k + 2];
    let me = state.positions[index];
    let mut mark = |offset: usize, p: [f64; 2]| {
        let (dx, dy) = (p[0] - me[0], p[1] - me[1]);
        let d = dx.hypot(dy);
        if d > cfg.sensor_range {
            return;
        }
        let reading = if d > 0.0 {
            (1.0 / d).min(cfg.inverse_distance_cap)
        } else {
            cfg.inverse_distance_cap
        };
        let slot = &mut obs[offset + sector_of(dx, dy, k)];
        *slot = f64::max(*slot, reading);
    };
    for (j, &p) in state.positions.iter().enumerate() {
        if j != index {
            mark(0, p);
        }
    }
    for (poi, _) in state.pois.iter().zip(&state.harvested).filter(|(_, &h)| !h) {
        mark(k, *poi);
    }
    obs[2 * k] = state.velocities[index][0];
    obs[2 * k + 1] = state.velocities[index][1];
    obs
}

#[derive(Clone, Debug)]
pub struct RoverDomain {
    cfg: RoverConfig,
    spec: EnvSpec,
    state: RoverState,
}

impl RoverDomain {
    pub fn new(cfg: RoverConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec::new(
            Space::continuous_box(cfg.observation_dim(), f64::NEG_INFINITY, f64::INFINITY),
            Space::continuous_box(2, -1.0, 1.0),
            cfg.horizon,
            cfg.discount,
        )?;
        let mut layout = Rng::seed_from_u64(cfg.layout_seed);
        let offset = layout.random_range(0.0..TAU);
        let pois = (0..cfg.n_pois)
            .map(|i| {
                let angle = offset + TAU * i as f64 / cfg.n_pois as f64;
                let r = layout.random_range(cfg.poi_ring.0..=cfg.poi_ring.1);
                [0.5 + r * angle.cos(), 0.5 + r * angle.sin()]
            })
            .collect::<Vec<_>>();
        let state = RoverState {
            positions: vec![[0.5, 0.5]; cfg.n_rovers],
            velocities: vec![[0.0; 2]; cfg.n_rovers],
            harvested: vec![false; pois.len()],
            pois,
            t: 0,
        };
        Ok(Self { cfg, spec, state })
    }

    pub fn config(&self) -> &RoverConfig {
        &self.cfg
    }

    pub fn state(&self) -> &RoverState {
        &self.state
    }

    /// Replaces the world state (scenario construction and tests).
    pub fn set_state(&mut self, state: RoverState) -> Result<()> {
        if state.positions.len() != self.cfg.n_rovers
            || state.velocities.len() != self.cfg.n_rovers
            || state.pois.len() != state.harvested.len()
        {
            return Err(Error::Shape("rover state does not match the config".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_rovers)
            .map(|i| rover_sense(&self.state, &self.cfg, i))
            .collect()
    }

    /// Advances the world by one step of joint forces.
    pub fn rover_step(&mut self, actions: &[Vec<f64>]) -> Result<RoverOutcome> {
        if actions.len() != self.cfg.n_rovers {
            return Err(Error::Shape(format!(
                "expected {} rover actions, got {}",
                self.cfg.n_rovers,
                actions.len()
            )));
        }
        for a in actions {
            if a.iter().any(|x| x.is_nan()) {
                return Err(Error::NonFinite("rover action".into()));
            }
            a.check_in(&self.spec.action)?;
        }
        if self.state.t == self.cfg.horizon {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        let cfg = &self.cfg;
        let st = &mut self.state;
        for ((p, v), a) in st.positions.iter_mut().zip(&mut st.velocities).zip(actions) {
            for d in 0..2 {
                v[d] = cfg.damping * v[d] + a[d] * cfg.dt;
                p[d] = (p[d] + v[d] * cfg.dt).clamp(0.0, 1.0);
            }
        }
        let within =
            |p: &[f64; 2], poi: &[f64; 2]| (p[0] - poi[0]).hypot(p[1] - poi[1]) <= cfg.obs_radius;
        let local_rewards = st
            .positions
            .iter()
            .map(|p| {
                let near_open = st
                    .pois
                    .iter()
                    .zip(&st.harvested)
                    .any(|(poi, &h)| !h && within(p, poi));
                if near_open {
                    cfg.local_reward
                } else {
                    0.0
                }
            })
            .collect();
        let mut team_reward = 0.0;
        for (poi, harvested) in st.pois.iter().zip(st.harvested.iter_mut()) {
            if *harvested {
                continue;
            }
            let present = st.positions.iter().filter(|p| within(p, poi)).count();
            if present >= cfg.coupling {
                *harvested = true;
                team_reward += 1.0;
            }
        }
        st.t += 1;
        Ok(RoverOutcome {
            team_reward,
            local_rewards,
            terminal: st.t == cfg.horizon,
        })
    }
}

impl Environment for RoverDomain {
    type State = Vec<Vec<f64>>;
    type Action = Vec<Vec<f64>>;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::seed_from_u64(seed);
        let j = self.cfg.start_jitter;
        for (p, v) in self
            .state
            .positions
            .iter_mut()
            .zip(&mut self.state.velocities)
        {
            *p = [0.5, 0.5].map(|c| {
                if j > 0.0 {
                    c + rng.random_range(-j..=j)
                } else {
                    c
                }
            });
            *v = [0.0; 2];
        }
        self.state.harvested.iter_mut().for_each(|h| *h = false);
        self.state.t = 0;
        self.observations()
    }

    fn step(&mut self, action: &Vec<Vec<f64>>) -> Result<Step<Vec<Vec<f64>>>> {
        let out = self.rover_step(action)?;
        Ok(Step {
            next_state: self.observations(),
            reward: out.team_reward + out.local_rewards.iter().sum::<f64>(),
            terminal: false,
            truncated: out.terminal,
        })
    }
}

/// Per-step positions and harvest flags of one episode, for offline rendering.
#[derive(Clone, Debug, Default)]
pub struct RoverTrace {
    pub pois: Vec<[f64; 2]>,
    pub frames: Vec<(Vec<[f64; 2]>, Vec<bool>)>,
}

impl RoverTrace {
    pub fn record(&mut self, state: &RoverState) {
        if self.pois.is_empty() {
            self.pois = state.pois.clone();
        }
        self.frames
            .push((state.positions.clone(), state.harvested.clone()));
    }

    /// CSV rows `t,kind,index,x,y,harvested`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,kind,index,x,y,harvested")?;
        for (t, (positions, harvested)) in self.frames.iter().enumerate() {
            for (i, p) in positions.iter().enumerate() {
                writeln!(out, "{t},rover,{i},{},{},", p[0], p[1])?;
            }
            for (i, (p, h)) in self.pois.iter().zip(harvested).enumerate() {
                writeln!(out, "{t},poi,{i},{},{},{}", p[0], p[1], u8::from(*h))?;
            }
        }
        Ok(())
    }
}

/// Mirror image of an observation under reflection about the horizontal
/// axis: sector `k` maps to `-k mod sectors` and `vy` flips sign.
pub fn reflect_observation(obs: &[f64], sectors: usize) -> Vec<f64> {
    let mut out = obs.to_vec();
    for block in 0..2 {
        for k in 0..sectors {
            out[block * sectors + (sectors - k) % sectors] = obs[block * sectors + k];
        }
    }
    out[2 * sectors + 1] = -obs[2 * sectors + 1];
    out
}
