//! Multi-agent actor-critic for homogeneous teams: one deterministic policy
//! per agent and a shared permutation-invariant critic on the joint set.
//!
//! [`MaTd3`] uses twin scalar set critics with TD3 targets. [`MaC51`] swaps
//! them for one categorical set critic on the log-space support of
//! [`LogAtoms`]; its rewards must be guidance rewards in `[0, 1]`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::set_critic::{SetAdam, SharedSetCritic};
use super::td3::{actor_net, smoothed};
use super::{check_loss, min_with_mask, normal_matrix, Batch, LogAtoms, UpdateStats};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, DenseNet, ForwardCache, Head, TargetTracker};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaConfig {
    pub policy_hidden: Vec<usize>,
    pub policy_activation: Activation,
    /// Hidden sizes of both the per-agent encoder and the pooled head.
    pub critic_hidden: Vec<usize>,
    pub embed: usize,
    pub critic_activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub exploration_noise: f64,
    pub atoms: usize,
}

impl Default for MaConfig {
    fn default() -> Self {
        Self {
            policy_hidden: vec![128, 128],
            policy_activation: Activation::Tanh,
            critic_hidden: vec![64],
            embed: 64,
            critic_activation: Activation::Relu,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.1,
            atoms: 51,
        }
    }
}

impl MaConfig {
    fn validate(&self) -> Result<()> {
        if self.policy_delay == 0 {
            return Err(Error::InvalidArgument(
                "policy delay must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(
                "gamma and tau must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Common dimensions of a team; rejects heterogeneous agents.
pub fn homogeneous(obs_dims: &[usize], act_dims: &[usize]) -> Result<(usize, usize, usize)> {
    let k = obs_dims.len();
    if k == 0 || act_dims.len() != k {
        return Err(Error::InvalidArgument(
            "need one observation and action size per agent".into(),
        ));
    }
    if obs_dims.iter().any(|&d| d != obs_dims[0]) || act_dims.iter().any(|&d| d != act_dims[0]) {
        return Err(Error::InvalidArgument(format!(
            "agents must be homogeneous, got observation sizes {obs_dims:?} and action sizes {act_dims:?}"
        )));
    }
    Ok((k, obs_dims[0], act_dims[0]))
}

/// Per-agent deterministic policies with targets.
#[derive(Clone, Debug)]
struct Team {
    obs_dim: usize,
    act_dim: usize,
    actors: Vec<DenseNet>,
    targets: Vec<TargetTracker>,
    opts: Vec<Adam>,
}

impl Team {
    fn new(
        k: usize,
        obs_dim: usize,
        act_dim: usize,
        cfg: &MaConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let actors = (0..k)
            .map(|_| {
                actor_net(
                    obs_dim,
                    act_dim,
                    &cfg.policy_hidden,
                    cfg.policy_activation,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            obs_dim,
            act_dim,
            targets: actors
                .iter()
                .map(|a| TargetTracker::new(a, cfg.tau))
                .collect(),
            opts: actors
                .iter()
                .map(|a| Adam::for_net(a, cfg.actor_lr))
                .collect(),
            actors,
        })
    }

    fn block<'a>(&self, obs: &'a Array2<f64>, i: usize) -> ArrayView2<'a, f64> {
        obs.slice(s![.., i * self.obs_dim..(i + 1) * self.obs_dim])
    }

    fn joint(&self, obs: &Array2<f64>, target: bool) -> Result<Array2<f64>> {
        let parts = (0..self.actors.len())
            .map(|i| {
                let net = if target {
                    self.targets[i].net()
                } else {
                    &self.actors[i]
                };
                net.predict(&self.block(obs, i).to_owned())
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
    }

    fn forward(&self, obs: &Array2<f64>) -> Result<(Array2<f64>, Vec<ForwardCache>)> {
        let mut caches = Vec::with_capacity(self.actors.len());
        let mut parts = Vec::with_capacity(self.actors.len());
        for (i, a) in self.actors.iter().enumerate() {
            let (out, cache) = a.forward(&self.block(obs, i).to_owned())?;
            parts.push(out);
            caches.push(cache);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok((
            concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?,
            caches,
        ))
    }

    fn step(&mut self, caches: &[ForwardCache], d_act: &Array2<f64>) -> Result<()> {
        let a = self.act_dim;
        for (i, cache) in caches.iter().enumerate() {
            let grad = d_act.slice(s![.., i * a..(i + 1) * a]).to_owned();
            let (g, _) = self.actors[i].backward(cache, &grad)?;
            self.opts[i].step(&mut self.actors[i], &g)?;
        }
        for (t, a) in self.targets.iter_mut().zip(&self.actors) {
            t.update(a)?;
        }
        Ok(())
    }

    fn act(&self, obs: &[f64], explore: Option<(f64, &mut Rng)>) -> Result<Vec<f64>> {
        let k = self.actors.len();
        if obs.len() != k * self.obs_dim {
            return Err(Error::Shape(format!(
                "expected {} joint observation values",
                k * self.obs_dim
            )));
        }
        let mut out = Vec::with_capacity(k * self.act_dim);
        for (i, a) in self.actors.iter().enumerate() {
            out.extend(a.predict_one(&obs[i * self.obs_dim..(i + 1) * self.obs_dim])?);
        }
        if let Some((sigma, rng)) = explore {
            let noise = normal_matrix(1, out.len(), sigma, rng);
            for (v, n) in out.iter_mut().zip(noise.iter()) {
                *v = (*v + n).clamp(-1.0, 1.0);
            }
        }
        Ok(out)
    }

    fn check(&self, batch: &Batch) -> Result<()> {
        let k = self.actors.len();
        if batch.obs.ncols() != k * self.obs_dim || batch.actions.ncols() != k * self.act_dim {
            return Err(Error::Shape("joint batch does not match the team".into()));
        }
        Ok(())
    }
}

fn set_regress(
    critic: &mut SharedSetCritic,
    opt: &mut SetAdam,
    obs: &Array2<f64>,
    act: &Array2<f64>,
    y: &Array1<f64>,
) -> Result<f64> {
    let (pred, cache) = critic.forward(obs, act)?;
    let resid = &pred.column(0) - y;
    let n = y.len() as f64;
    let loss = check_loss("critic", resid.mapv(|r| r * r).sum() / n)?;
    let (g, _, _) = critic.backward(&cache, &resid.mapv(|r| 2.0 * r / n).insert_axis(Axis(1)))?;
    opt.step(critic, &g)?;
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct MaTd3 {
    cfg: MaConfig,
    team: Team,
    critics: [SharedSetCritic; 2],
    targets: [SharedSetCritic; 2],
    opts: [SetAdam; 2],
    calls: u64,
}

impl MaTd3 {
    pub fn new(
        obs_dims: &[usize],
        act_dims: &[usize],
        cfg: MaConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, o, a) = homogeneous(obs_dims, act_dims)?;
        let team = Team::new(k, o, a, &cfg, rng)?;
        let critic = |rng: &mut Rng| {
            SharedSetCritic::new(
                k,
                o,
                a,
                &cfg.critic_hidden,
                cfg.embed,
                1,
                cfg.critic_activation,
                Head::Scalar,
                rng,
            )
        };
        let critics = [critic(rng)?, critic(rng)?];
        Ok(Self {
            targets: critics.clone(),
            opts: [
                SetAdam::new(&critics[0], cfg.critic_lr),
                SetAdam::new(&critics[1], cfg.critic_lr),
            ],
            critics,
            team,
            cfg,
            calls: 0,
        })
    }

    pub fn critics(&self) -> &[SharedSetCritic; 2] {
        &self.critics
    }

    pub fn actors(&self) -> &[DenseNet] {
        &self.team.actors
    }

    /// Joint action for a flat joint observation.
    pub fn act(&self, obs: &[f64], rng: &mut Rng, explore: bool) -> Result<Vec<f64>> {
        self.team
            .act(obs, explore.then_some((self.cfg.exploration_noise, rng)))
    }

    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        self.team.check(batch)?;
        self.calls += 1;
        let next = smoothed(
            &self.team.joint(&batch.next_obs, true)?,
            self.cfg.target_noise,
            self.cfg.noise_clip,
            rng,
        );
        let t1 = self.targets[0]
            .predict(&batch.next_obs, &next)?
            .column(0)
            .to_owned();
        let t2 = self.targets[1]
            .predict(&batch.next_obs, &next)?
            .column(0)
            .to_owned();
        let (tmin, _) = min_with_mask(&t1, &t2);
        let y = &batch.rewards + &(self.cfg.gamma * &(1.0 - &batch.terminal) * &tmin);
        let mut loss = 0.0;
        for (c, o) in self.critics.iter_mut().zip(self.opts.iter_mut()) {
            loss += 0.5 * set_regress(c, o, &batch.obs, &batch.actions, &y)?;
        }

        let (mut actor_loss, mut mean_q) = (f64::NAN, f64::NAN);
        if self.calls.is_multiple_of(self.cfg.policy_delay) {
            let n = batch.len() as f64;
            let (joint, caches) = self.team.forward(&batch.obs)?;
            let (q, cache) = self.critics[0].forward(&batch.obs, &joint)?;
            mean_q = q.sum() / n;
            actor_loss = check_loss("actor", -mean_q)?;
            let (_, _, d_act) =
                self.critics[0].backward(&cache, &Array2::from_elem((batch.len(), 1), -1.0 / n))?;
            self.team.step(&caches, &d_act)?;
            for (t, c) in self.targets.iter_mut().zip(&self.critics) {
                t.polyak_from(c, self.cfg.tau)?;
            }
        }
        Ok(UpdateStats {
            critic_loss: loss,
            actor_loss,
            alpha: 0.0,
            mean_reward: batch.rewards.mean().unwrap_or(0.0),
            mean_q,
        })
    }
}

#[derive(Clone, Debug)]
pub struct MaC51 {
    cfg: MaConfig,
    atoms: LogAtoms,
    team: Team,
    critic: SharedSetCritic,
    target: SharedSetCritic,
    opt: SetAdam,
    calls: u64,
}

impl MaC51 {
    pub fn new(
        obs_dims: &[usize],
        act_dims: &[usize],
        cfg: MaConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, o, a) = homogeneous(obs_dims, act_dims)?;
        let atoms = LogAtoms::new(cfg.atoms)?;
        let team = Team::new(k, o, a, &cfg, rng)?;
        let critic = SharedSetCritic::new(
            k,
            o,
            a,
            &cfg.critic_hidden,
            cfg.embed,
            cfg.atoms,
            cfg.critic_activation,
            Head::Softmax,
            rng,
        )?;
        Ok(Self {
            target: critic.clone(),
            opt: SetAdam::new(&critic, cfg.critic_lr),
            critic,
            team,
            atoms,
            cfg,
            calls: 0,
        })
    }

    pub fn atoms(&self) -> &LogAtoms {
        &self.atoms
    }

    pub fn critic(&self) -> &SharedSetCritic {
        &self.critic
    }

    pub fn actors(&self) -> &[DenseNet] {
        &self.team.actors
    }

    pub fn act(&self, obs: &[f64], rng: &mut Rng, explore: bool) -> Result<Vec<f64>> {
        self.team
            .act(obs, explore.then_some((self.cfg.exploration_noise, rng)))
    }

    /// Projected target distributions, one row per transition.
    pub fn target_distribution(&self, batch: &Batch, rng: &mut Rng) -> Result<Array2<f64>> {
        if let Some(r) = batch.rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!(
                "categorical critic needs guidance rewards in [0, 1], got {r}"
            )));
        }
        let next = smoothed(
            &self.team.joint(&batch.next_obs, true)?,
            self.cfg.target_noise,
            self.cfg.noise_clip,
            rng,
        );
        let p_next = self.target.predict(&batch.next_obs, &next)?;
        let mut m = Array2::zeros(p_next.raw_dim());
        for b in 0..batch.len() {
            let atoms =
                self.atoms
                    .target_atoms(batch.rewards[b], self.cfg.gamma, batch.terminal[b] > 0.5);
            let row = self.atoms.project(&atoms, &p_next.row(b).to_vec())?;
            m.row_mut(b).assign(&Array1::from(row));
        }
        Ok(m)
    }

    /// Expected log-values of the online critic.
    pub fn q_values(&self, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array1<f64>> {
        let p = self.critic.predict(obs, actions)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| self.atoms.mean(&r.to_vec()))
            .collect())
    }

    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        self.team.check(batch)?;
        self.calls += 1;
        let n = batch.len() as f64;
        let m = self.target_distribution(batch, rng)?;
        let (p, cache) = self.critic.forward(&batch.obs, &batch.actions)?;
        let ce = -(&m * &p.mapv(|v| v.max(1e-300).ln())).sum() / n;
        let loss = check_loss("categorical critic", ce)?;
        let (g, _, _) = self.critic.backward_from_logits(&cache, &((&p - &m) / n))?;
        self.opt.step(&mut self.critic, &g)?;

        let (mut actor_loss, mut mean_q) = (f64::NAN, f64::NAN);
        if self.calls.is_multiple_of(self.cfg.policy_delay) {
            let (joint, caches) = self.team.forward(&batch.obs)?;
            let (p, cache) = self.critic.forward(&batch.obs, &joint)?;
            let z = Array1::from(self.atoms.z().to_vec());
            let q = p.dot(&z);
            mean_q = q.sum() / n;
            actor_loss = check_loss("actor", -mean_q)?;
            // d(-mean Q)/d logit_i = -p_i (z_i - Q) / n
            let centered = &z.clone().insert_axis(Axis(0)) - &q.clone().insert_axis(Axis(1));
            let grad = -(&p * &centered) / n;
            let (_, _, d_act) = self.critic.backward_from_logits(&cache, &grad)?;
            self.team.step(&caches, &d_act)?;
            self.target.polyak_from(&self.critic, self.cfg.tau)?;
        }
        Ok(UpdateStats {
            critic_loss: loss,
            actor_loss,
            alpha: 0.0,
            mean_reward: batch.rewards.mean().unwrap_or(0.0),
            mean_q,
        })
    }
}
