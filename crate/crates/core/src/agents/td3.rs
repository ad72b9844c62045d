//! Deterministic-policy actor-critic with clipped double Q-learning, target
//! policy smoothing and delayed actor updates.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{check_loss, column, hcat, min_with_mask, normal_matrix, regress, Batch, UpdateStats};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, DenseNet, Head, TargetTracker};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub exploration_noise: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.1,
        }
    }
}

impl Td3Config {
    pub(crate) fn validate(&self) -> Result<()> {
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
        if self.target_noise < 0.0 || self.noise_clip < 0.0 || self.exploration_noise < 0.0 {
            return Err(Error::InvalidArgument(
                "noise scales must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Adds `N(0, sigma)` clipped at `+-clip` and clips the result to `[-1, 1]`.
pub(crate) fn smoothed(actions: &Array2<f64>, sigma: f64, clip: f64, rng: &mut Rng) -> Array2<f64> {
    let noise =
        normal_matrix(actions.nrows(), actions.ncols(), sigma, rng).mapv(|v| v.clamp(-clip, clip));
    (actions + &noise).mapv(|v| v.clamp(-1.0, 1.0))
}

pub(crate) fn actor_net(
    input: usize,
    output: usize,
    hidden: &[usize],
    act: Activation,
    rng: &mut Rng,
) -> Result<DenseNet> {
    let mut sizes = vec![input];
    sizes.extend(hidden);
    sizes.push(output);
    DenseNet::new(&sizes, act, Activation::Tanh, Head::Vector, rng)
}

#[derive(Clone, Debug)]
pub struct Td3Agent {
    cfg: Td3Config,
    obs_dim: usize,
    act_dim: usize,
    actor: DenseNet,
    actor_target: TargetTracker,
    q: [DenseNet; 2],
    q_target: [TargetTracker; 2],
    actor_opt: Adam,
    q_opt: [Adam; 2],
    calls: u64,
}

impl Td3Agent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: Td3Config, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let actor = actor_net(obs_dim, act_dim, &cfg.hidden, cfg.activation, rng)?;
        let mut sizes = vec![obs_dim + act_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let q1 = DenseNet::new(
            &sizes,
            cfg.activation,
            Activation::Linear,
            Head::Scalar,
            rng,
        )?;
        let q2 = DenseNet::new(
            &sizes,
            cfg.activation,
            Activation::Linear,
            Head::Scalar,
            rng,
        )?;
        Ok(Self::assemble(obs_dim, act_dim, cfg, actor, [q1, q2]))
    }

    fn assemble(
        obs_dim: usize,
        act_dim: usize,
        cfg: Td3Config,
        actor: DenseNet,
        q: [DenseNet; 2],
    ) -> Self {
        Self {
            actor_target: TargetTracker::new(&actor, cfg.tau),
            q_target: [
                TargetTracker::new(&q[0], cfg.tau),
                TargetTracker::new(&q[1], cfg.tau),
            ],
            actor_opt: Adam::for_net(&actor, cfg.actor_lr),
            q_opt: [
                Adam::for_net(&q[0], cfg.critic_lr),
                Adam::for_net(&q[1], cfg.critic_lr),
            ],
            obs_dim,
            act_dim,
            actor,
            q,
            cfg,
            calls: 0,
        }
    }

    /// An agent whose second critic is a copy of the first.
    pub fn with_twin_copies(
        obs_dim: usize,
        act_dim: usize,
        cfg: Td3Config,
        rng: &mut Rng,
    ) -> Result<Self> {
        let agent = Self::new(obs_dim, act_dim, cfg, rng)?;
        let q1 = agent.q[0].clone();
        Ok(Self::assemble(
            obs_dim,
            act_dim,
            agent.cfg,
            agent.actor,
            [q1.clone(), q1],
        ))
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critics(&self) -> &[DenseNet; 2] {
        &self.q
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn act(&self, obs: &[f64], rng: &mut Rng, explore: bool) -> Result<Vec<f64>> {
        let mut a = self.actor.predict_one(obs)?;
        if explore {
            let noise = normal_matrix(1, a.len(), self.cfg.exploration_noise, rng);
            for (v, n) in a.iter_mut().zip(noise.iter()) {
                *v = (*v + n).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Clipped double-Q target `r + gamma (1 - terminal) min(Q1', Q2')` with
    /// smoothed target actions, plus the two target-critic columns.
    pub fn bellman_target(
        &self,
        batch: &Batch,
        rng: &mut Rng,
    ) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
        let next = smoothed(
            &self.actor_target.net().predict(&batch.next_obs)?,
            self.cfg.target_noise,
            self.cfg.noise_clip,
            rng,
        );
        let xn = hcat(&batch.next_obs, &next);
        let t1 = column(&self.q_target[0].net().predict(&xn)?);
        let t2 = column(&self.q_target[1].net().predict(&xn)?);
        let (tmin, _) = min_with_mask(&t1, &t2);
        let y = &batch.rewards + &(self.cfg.gamma * &(1.0 - &batch.terminal) * &tmin);
        Ok((y, t1, t2))
    }

    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        if batch.obs.ncols() != self.obs_dim || batch.actions.ncols() != self.act_dim {
            return Err(Error::Shape(
                "batch does not match the agent's dimensions".into(),
            ));
        }
        self.calls += 1;
        let (y, _, _) = self.bellman_target(batch, rng)?;
        let x = hcat(&batch.obs, &batch.actions);
        let l1 = regress(&mut self.q[0], &mut self.q_opt[0], &x, &y)?;
        let l2 = regress(&mut self.q[1], &mut self.q_opt[1], &x, &y)?;

        let mut actor_loss = f64::NAN;
        let mut mean_q = f64::NAN;
        if self.calls.is_multiple_of(self.cfg.policy_delay) {
            let n = batch.len() as f64;
            let (a, cache) = self.actor.forward(&batch.obs)?;
            let (q, qc) = self.q[0].forward(&hcat(&batch.obs, &a))?;
            mean_q = q.sum() / n;
            actor_loss = check_loss("actor", -mean_q)?;
            let (_, dx) =
                self.q[0].backward(&qc, &Array2::from_elem((batch.len(), 1), -1.0 / n))?;
            let grad = dx.slice(s![.., self.obs_dim..]).to_owned();
            let (g, _) = self.actor.backward(&cache, &grad)?;
            self.actor_opt.step(&mut self.actor, &g)?;
            self.actor_target.update(&self.actor)?;
            for (t, q) in self.q_target.iter_mut().zip(&self.q) {
                t.update(q)?;
            }
        }
        Ok(UpdateStats {
            critic_loss: 0.5 * (l1 + l2),
            actor_loss,
            alpha: 0.0,
            mean_reward: batch.rewards.mean().unwrap_or(0.0),
            mean_q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    fn batch(n: usize, rng: &mut Rng) -> Batch {
        let obs = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let actions = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-1.0..1.0));
        let rewards: Array1<f64> = (0..n).map(|i| (i % 3) as f64 / 2.0).collect();
        Batch {
            next_obs: obs.mapv(|v| -v),
            obs,
            actions,
            returns: rewards.clone(),
            rewards,
            terminal: Array1::zeros(n),
        }
    }

    #[test]
    fn twin_copies_give_single_critic_target() {
        let mut rng = seed::rng(0, "td3-twin");
        let agent = Td3Agent::with_twin_copies(3, 2, Td3Config::default(), &mut rng).unwrap();
        let b = batch(10, &mut rng);
        let (y, t1, t2) = agent
            .bellman_target(&b, &mut seed::rng(1, "noise"))
            .unwrap();
        assert_eq!(t1, t2);
        let single = &b.rewards + &(0.99 * &t1);
        assert_eq!(y, single);
    }

    #[test]
    fn actor_moves_only_on_delay_multiples() {
        let mut rng = seed::rng(2, "td3-delay");
        let mut agent = Td3Agent::new(3, 2, Td3Config::default(), &mut rng).unwrap();
        let b = batch(16, &mut rng);
        for call in 1..=6 {
            let before = agent.actor.clone();
            let stats = agent.update(&b, &mut rng).unwrap();
            if call % 2 == 1 {
                assert_eq!(agent.actor, before, "call {call}");
                assert!(stats.actor_loss.is_nan());
            } else {
                assert_ne!(agent.actor, before, "call {call}");
            }
        }
    }

    #[test]
    fn bandit_limit_critics_regress_to_rewards() {
        let mut rng = seed::rng(3, "td3-bandit");
        let cfg = Td3Config {
            gamma: 0.0,
            critic_lr: 3e-3,
            ..Td3Config::default()
        };
        let mut agent = Td3Agent::new(3, 2, cfg, &mut rng).unwrap();
        let b = batch(8, &mut rng);
        for _ in 0..3000 {
            agent.update(&b, &mut rng).unwrap();
        }
        let x = hcat(&b.obs, &b.actions);
        for q in &agent.q {
            let err = (&column(&q.predict(&x).unwrap()) - &b.rewards)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 0.02, "{err}");
        }
    }

    #[test]
    fn exploration_stays_in_bounds_and_greedy_is_deterministic() {
        let mut rng = seed::rng(4, "td3-act");
        let agent = Td3Agent::new(3, 2, Td3Config::default(), &mut rng).unwrap();
        for _ in 0..100 {
            assert!(agent
                .act(&[1.0, 2.0, 3.0], &mut rng, true)
                .unwrap()
                .iter()
                .all(|v| v.abs() <= 1.0));
        }
        assert_eq!(
            agent.act(&[0.5, 0.0, 0.0], &mut rng, false).unwrap(),
            agent.act(&[0.5, 0.0, 0.0], &mut rng, false).unwrap()
        );
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        let mut rng = seed::rng(5, "smooth");
        let zeros = Array2::zeros((500, 2));
        let out = smoothed(&zeros, 10.0, 0.5, &mut rng);
        assert!(out.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn rejects_zero_delay() {
        let mut rng = seed::rng(6, "td3-bad");
        let cfg = Td3Config {
            policy_delay: 0,
            ..Td3Config::default()
        };
        assert!(Td3Agent::new(3, 2, cfg, &mut rng).is_err());
    }
}
