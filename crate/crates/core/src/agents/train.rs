//! Episode-level training loop: collect an episode, insert it into the
//! return-tagged replay, then take gradient steps on sampled batches.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    MaC51, MaConfig, MaTd3, ReplayConfig, ReturnTaggedReplay, SacAgent, SacConfig, Td3Agent,
    Td3Config, UpdateStats,
};
use crate::credit::RewardSource;
use crate::envs::{PointMassEnv, RoverDomain};
use crate::error::{Error, Result};
use crate::mdp::{Environment, Step, Trajectory, Transition};
use crate::seed::{self, Rng};

/// A single- or multi-agent environment seen through flat vectors. Joint
/// observations and actions concatenate the per-agent blocks in agent order.
pub trait FlatEnv {
    fn agents(&self) -> usize;
    /// Per-agent observation size.
    fn obs_dim(&self) -> usize;
    /// Per-agent action size; actions lie in `[-1, 1]`.
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset_flat(&mut self, seed: u64) -> Vec<f64>;
    fn step_flat(&mut self, action: &[f64]) -> Result<Step<Vec<f64>>>;
    /// Task score of the current (usually final) state.
    fn metric(&self) -> f64;
}

impl FlatEnv for PointMassEnv {
    fn agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config().horizon
    }

    fn reset_flat(&mut self, seed: u64) -> Vec<f64> {
        self.reset(seed)
    }

    fn step_flat(&mut self, action: &[f64]) -> Result<Step<Vec<f64>>> {
        self.step(&action.to_vec())
    }

    /// The terminal reward the current position would earn.
    fn metric(&self) -> f64 {
        PointMassEnv::terminal_reward(self.distance_to_goal())
    }
}

impl FlatEnv for RoverDomain {
    fn agents(&self) -> usize {
        self.config().n_rovers
    }

    fn obs_dim(&self) -> usize {
        self.config().observation_dim()
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config().horizon
    }

    fn reset_flat(&mut self, seed: u64) -> Vec<f64> {
        self.reset(seed).concat()
    }

    fn step_flat(&mut self, action: &[f64]) -> Result<Step<Vec<f64>>> {
        let joint: Vec<Vec<f64>> = action.chunks(2).map(<[f64]>::to_vec).collect();
        let step = self.step(&joint)?;
        Ok(Step {
            next_state: step.next_state.concat(),
            reward: step.reward,
            terminal: step.terminal,
            truncated: step.truncated,
        })
    }

    /// Fraction of POIs harvested.
    fn metric(&self) -> f64 {
        self.state().harvest_fraction()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sac,
    Td3,
    MaTd3,
    MaC51,
    /// Uniform actions; never learns.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub agent: AgentKind,
    pub reward: RewardSource,
    /// Environment steps.
    pub budget: usize,
    /// Steps of uniform random actions before the policy acts.
    pub warmup: usize,
    /// Gradient steps per environment step, applied after each episode.
    pub update_ratio: f64,
    pub batch_size: usize,
    /// Evaluate after the first episode ending at or past every multiple.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub replay: ReplayConfig,
    pub sac: SacConfig,
    pub td3: Td3Config,
    pub ma: MaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Sac,
            reward: RewardSource::Guidance,
            budget: 100_000,
            warmup: 5_000,
            update_ratio: 0.25,
            batch_size: 64,
            eval_every: 5_000,
            eval_episodes: 10,
            replay: ReplayConfig::default(),
            sac: SacConfig::default(),
            td3: Td3Config::default(),
            ma: MaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("training budget must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.update_ratio >= 0.0 && self.update_ratio.is_finite()) {
            return Err(Error::Config(
                "update ratio must be a nonnegative number".into(),
            ));
        }
        if self.eval_episodes == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "evaluation cadence and episode count must be positive".into(),
            ));
        }
        if self.agent == AgentKind::MaC51 && self.reward == RewardSource::Environmental {
            return Err(Error::Config(
                "the categorical critic's log-space support needs guidance rewards".into(),
            ));
        }
        Ok(())
    }
}

impl TrainConfig {
    /// SAC on the point mass: 100k steps, 2k warmup, 5 evaluation points.
    pub fn desk_pointmass(reward: RewardSource) -> Self {
        Self {
            agent: AgentKind::Sac,
            reward,
            budget: 100_000,
            warmup: 2_000,
            eval_every: 20_000,
            ..Self::default()
        }
    }

    /// Multi-agent rover team: 20k steps, 2k warmup, 2x64 Tanh policies.
    pub fn desk_rover(agent: AgentKind, reward: RewardSource) -> Self {
        Self {
            agent,
            reward,
            budget: 20_000,
            warmup: 2_000,
            eval_every: 4_000,
            ma: MaConfig {
                policy_hidden: vec![64, 64],
                ..MaConfig::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episode: usize,
    /// Mean metric of the training episodes since the previous point.
    pub train_metric: f64,
    /// Mean metric of deterministic evaluation episodes.
    pub eval_metric: f64,
    pub gradient_steps: u64,
    /// Last update's diagnostics, if any update happened.
    pub last_update: Option<UpdateStats>,
    pub return_min: Option<f64>,
    pub return_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub curve: Vec<CurvePoint>,
    /// Evaluation metric at the end of the budget.
    pub final_metric: f64,
    pub episodes: usize,
    pub gradient_steps: u64,
}

#[derive(Clone, Debug)]
enum Learner {
    Sac(Box<SacAgent>),
    Td3(Box<Td3Agent>),
    MaTd3(Box<MaTd3>),
    MaC51(Box<MaC51>),
    Random { dim: usize },
}

impl Learner {
    fn act(&self, obs: &[f64], rng: &mut Rng, explore: bool) -> Result<Vec<f64>> {
        match self {
            Self::Sac(a) => a.act(obs, rng, !explore),
            Self::Td3(a) => a.act(obs, rng, explore),
            Self::MaTd3(a) => a.act(obs, rng, explore),
            Self::MaC51(a) => a.act(obs, rng, explore),
            Self::Random { dim } => Ok(uniform_action(*dim, rng)),
        }
    }

    fn update(&mut self, batch: &super::Batch, rng: &mut Rng) -> Result<Option<UpdateStats>> {
        Ok(Some(match self {
            Self::Sac(a) => a.update(batch, rng)?,
            Self::Td3(a) => a.update(batch, rng)?,
            Self::MaTd3(a) => a.update(batch, rng)?,
            Self::MaC51(a) => a.update(batch, rng)?,
            Self::Random { .. } => return Ok(None),
        }))
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        match self {
            Self::Sac(a) => {
                p.extend(a.policy().params_flat());
                a.critics().iter().for_each(|q| p.extend(q.params_flat()));
                p.push(a.alpha());
            }
            Self::Td3(a) => {
                p.extend(a.actor().params_flat());
                a.critics().iter().for_each(|q| p.extend(q.params_flat()));
            }
            Self::MaTd3(a) => {
                a.actors().iter().for_each(|n| p.extend(n.params_flat()));
                a.critics().iter().for_each(|q| p.extend(q.params_flat()));
            }
            Self::MaC51(a) => {
                a.actors().iter().for_each(|n| p.extend(n.params_flat()));
                p.extend(a.critic().params_flat());
            }
            Self::Random { .. } => {}
        }
        p
    }
}

fn uniform_action(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Owns one agent, its replay and the environment for one seeded run.
pub struct Trainer<E: FlatEnv> {
    env: E,
    cfg: TrainConfig,
    seed: u64,
    learner: Learner,
    replay: ReturnTaggedReplay,
}

impl<E: FlatEnv> Trainer<E> {
    pub fn new(env: E, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (k, o, a) = (env.agents(), env.obs_dim(), env.act_dim());
        let mut rng = seed::rng(seed, "agent-init");
        let learner = match cfg.agent {
            AgentKind::Sac => Learner::Sac(Box::new(SacAgent::new(
                k * o,
                k * a,
                cfg.sac.clone(),
                &mut rng,
            )?)),
            AgentKind::Td3 => Learner::Td3(Box::new(Td3Agent::new(
                k * o,
                k * a,
                cfg.td3.clone(),
                &mut rng,
            )?)),
            AgentKind::MaTd3 => Learner::MaTd3(Box::new(MaTd3::new(
                &vec![o; k],
                &vec![a; k],
                cfg.ma.clone(),
                &mut rng,
            )?)),
            AgentKind::MaC51 => Learner::MaC51(Box::new(MaC51::new(
                &vec![o; k],
                &vec![a; k],
                cfg.ma.clone(),
                &mut rng,
            )?)),
            AgentKind::Random => Learner::Random { dim: k * a },
        };
        Ok(Self {
            replay: ReturnTaggedReplay::new(cfg.replay.clone())?,
            env,
            cfg,
            seed,
            learner,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn replay(&self) -> &ReturnTaggedReplay {
        &self.replay
    }

    /// All learnable parameters (and the temperature for SAC), flattened.
    pub fn params(&self) -> Vec<f64> {
        self.learner.params()
    }

    /// Mean metric over the deterministic evaluation episodes.
    pub fn evaluate(&mut self) -> Result<f64> {
        let mut rng = seed::rng(self.seed, "evaluation-actions");
        let mut total = 0.0;
        for i in 0..self.cfg.eval_episodes {
            let mut obs =
                self.env
                    .reset_flat(seed::derive_indexed(self.seed, "evaluation", i as u64));
            for _ in 0..self.env.horizon() {
                let action = self.learner.act(&obs, &mut rng, false)?;
                let step = self.env.step_flat(&action)?;
                let done = step.done();
                obs = step.next_state;
                if done {
                    break;
                }
            }
            total += self.env.metric();
        }
        Ok(total / self.cfg.eval_episodes as f64)
    }

    pub fn run(&mut self) -> Result<TrainResult> {
        let mut act_rng = seed::rng(self.seed, "acting");
        let mut update_rng = seed::rng(self.seed, "updates");
        let mut replay_rng = seed::rng(self.seed, "replay-sampling");
        let horizon = self.env.horizon();
        let dim = self.env.agents() * self.env.act_dim();
        let (mut steps, mut episode, mut gradient_steps) = (0usize, 0usize, 0u64);
        let mut owed = 0.0;
        let mut curve = Vec::new();
        let mut next_eval = self.cfg.eval_every;
        let (mut window_total, mut window_count) = (0.0, 0usize);
        let mut last_update = None;

        while steps < self.cfg.budget {
            let mut obs = self.env.reset_flat(seed::derive_indexed(
                self.seed,
                "training-episode",
                episode as u64,
            ));
            let mut traj: Trajectory<Vec<f64>, Vec<f64>> = Trajectory::new(horizon)?;
            for _ in 0..horizon {
                let action = if steps < self.cfg.warmup {
                    uniform_action(dim, &mut act_rng)
                } else {
                    self.learner.act(&obs, &mut act_rng, true)?
                };
                let step = self.env.step_flat(&action)?;
                steps += 1;
                let done = step.done();
                traj.push(Transition {
                    state: obs,
                    action,
                    reward: step.reward,
                    next_state: step.next_state.clone(),
                    terminal: step.terminal,
                    truncated: step.truncated,
                })?;
                obs = step.next_state;
                if done {
                    break;
                }
            }
            window_total += self.env.metric();
            window_count += 1;
            episode += 1;
            self.replay.insert_episode(&traj)?;

            owed += self.cfg.update_ratio * traj.len() as f64;
            if steps >= self.cfg.warmup {
                while owed >= 1.0 {
                    owed -= 1.0;
                    let batch = self.replay.sample(
                        self.cfg.batch_size,
                        self.cfg.reward,
                        &mut replay_rng,
                    )?;
                    if let Some(stats) = self.learner.update(&batch, &mut update_rng)? {
                        last_update = Some(stats);
                        gradient_steps += 1;
                    }
                }
            } else {
                owed = 0.0;
            }

            if steps >= next_eval || steps >= self.cfg.budget {
                while next_eval <= steps {
                    next_eval += self.cfg.eval_every;
                }
                let eval_metric = self.evaluate()?;
                let stats = self.replay.stats();
                curve.push(CurvePoint {
                    step: steps,
                    episode,
                    train_metric: window_total / window_count.max(1) as f64,
                    eval_metric,
                    gradient_steps,
                    last_update,
                    return_min: (stats.count() > 0).then(|| stats.r_min()),
                    return_max: (stats.count() > 0).then(|| stats.r_max()),
                });
                window_total = 0.0;
                window_count = 0;
            }
        }
        let final_metric = curve.last().map_or(f64::NAN, |p| p.eval_metric);
        Ok(TrainResult {
            curve,
            final_metric,
            episodes: episode,
            gradient_steps,
        })
    }
}

/// Builds a trainer and runs it to the end of its budget.
pub fn train_agent<E: FlatEnv>(env: E, cfg: TrainConfig, seed: u64) -> Result<TrainResult> {
    Trainer::new(env, cfg, seed)?.run()
}
