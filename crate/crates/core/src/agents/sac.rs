//! Soft actor-critic with a tanh-squashed Gaussian policy, twin critics and
//! a learned temperature.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{
    check_loss, checked_exp, column, hcat, min_with_mask, normal_matrix, regress, Batch,
    UpdateStats,
};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, DenseNet, ForwardCache, Head, TargetTracker};
use crate::seed::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            alpha_lr: 1e-4,
            gamma: 0.99,
            tau: 0.001,
            initial_alpha: 1.0,
            target_entropy: None,
        }
    }
}

/// Reparameterized sample of the squashed Gaussian policy.
struct PolicySample {
    cache: ForwardCache,
    /// Whether the raw log-std fell outside the clamp (zero gradient).
    clamped: Array2<bool>,
    std: Array2<f64>,
    eps: Array2<f64>,
    action: Array2<f64>,
    log_prob: Array1<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    cfg: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    policy: DenseNet,
    q: [DenseNet; 2],
    q_target: [TargetTracker; 2],
    log_alpha: f64,
    target_entropy: f64,
    policy_opt: Adam,
    q_opt: [Adam; 2],
    alpha_opt: Adam,
    updates: u64,
}

impl SacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: SacConfig, rng: &mut Rng) -> Result<Self> {
        if !(cfg.initial_alpha > 0.0) {
            return Err(Error::InvalidArgument(
                "initial temperature must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&cfg.gamma) || !(0.0..=1.0).contains(&cfg.tau) {
            return Err(Error::InvalidArgument(
                "gamma and tau must lie in [0, 1]".into(),
            ));
        }
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend(&cfg.hidden);
            v.push(output);
            v
        };
        let policy = DenseNet::new(
            &sizes(obs_dim, 2 * act_dim),
            cfg.activation,
            Activation::Linear,
            Head::Vector,
            rng,
        )?;
        let critic = |rng: &mut Rng| {
            DenseNet::new(
                &sizes(obs_dim + act_dim, 1),
                cfg.activation,
                Activation::Linear,
                Head::Scalar,
                rng,
            )
        };
        let q = [critic(rng)?, critic(rng)?];
        let q_target = [
            TargetTracker::new(&q[0], cfg.tau),
            TargetTracker::new(&q[1], cfg.tau),
        ];
        Ok(Self {
            obs_dim,
            act_dim,
            policy_opt: Adam::for_net(&policy, cfg.actor_lr),
            q_opt: [
                Adam::for_net(&q[0], cfg.critic_lr),
                Adam::for_net(&q[1], cfg.critic_lr),
            ],
            alpha_opt: Adam::with_shapes(&[1], cfg.alpha_lr),
            log_alpha: cfg.initial_alpha.ln(),
            target_entropy: cfg.target_entropy.unwrap_or(-(act_dim as f64)),
            policy,
            q,
            q_target,
            cfg,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn policy(&self) -> &DenseNet {
        &self.policy
    }

    pub fn critics(&self) -> &[DenseNet; 2] {
        &self.q
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    fn sample(&self, obs: &Array2<f64>, rng: Option<&mut Rng>) -> Result<PolicySample> {
        let (out, cache) = self.policy.forward(obs)?;
        let a = self.act_dim;
        let mean = out.slice(s![.., ..a]).to_owned();
        let raw = out.slice(s![.., a..]);
        let clamped = raw.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let std = log_std.mapv(f64::exp);
        let eps = match rng {
            Some(rng) => normal_matrix(obs.nrows(), a, 1.0, rng),
            None => Array2::zeros((obs.nrows(), a)),
        };
        let u = &mean + &(&std * &eps);
        let action = u.mapv(f64::tanh);
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut log_prob = Array1::zeros(obs.nrows());
        for b in 0..obs.nrows() {
            let mut lp = 0.0;
            for j in 0..a {
                let e = eps[[b, j]];
                lp += -0.5 * e * e - half_log_2pi - log_std[[b, j]] - log_tanh_jacobian(u[[b, j]]);
            }
            log_prob[b] = lp;
        }
        Ok(PolicySample {
            cache,
            clamped,
            std,
            eps,
            action,
            log_prob,
        })
    }

    /// Stochastic action, or `tanh(mean)` when `deterministic`.
    pub fn act(&self, obs: &[f64], rng: &mut Rng, deterministic: bool) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let sample = self.sample(&x, (!deterministic).then_some(rng))?;
        Ok(sample.action.into_raw_vec_and_offset().0)
    }

    /// Mean log-probability of fresh samples at `obs`.
    pub fn mean_log_prob(&self, obs: &Array2<f64>, rng: &mut Rng) -> Result<f64> {
        Ok(self.sample(obs, Some(rng))?.log_prob.mean().unwrap_or(0.0))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.obs.ncols() != self.obs_dim || batch.actions.ncols() != self.act_dim {
            return Err(Error::Shape(
                "batch does not match the agent's dimensions".into(),
            ));
        }
        Ok(())
    }

    /// One gradient step on critics, actor and temperature, then a Polyak
    /// step on the target critics.
    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let alpha = checked_exp(self.log_alpha, "temperature")?;

        let next = self.sample(&batch.next_obs, Some(rng))?;
        let xn = hcat(&batch.next_obs, &next.action);
        let t1 = column(&self.q_target[0].net().predict(&xn)?);
        let t2 = column(&self.q_target[1].net().predict(&xn)?);
        let (tmin, _) = min_with_mask(&t1, &t2);
        let soft = &tmin - &(alpha * &next.log_prob);
        let y = &batch.rewards + &(self.cfg.gamma * &(1.0 - &batch.terminal) * &soft);
        let x = hcat(&batch.obs, &batch.actions);
        let l1 = regress(&mut self.q[0], &mut self.q_opt[0], &x, &y)?;
        let l2 = regress(&mut self.q[1], &mut self.q_opt[1], &x, &y)?;

        let cur = self.sample(&batch.obs, Some(rng))?;
        let xa = hcat(&batch.obs, &cur.action);
        let (q1, c1) = self.q[0].forward(&xa)?;
        let (q2, c2) = self.q[1].forward(&xa)?;
        let (qmin, mask) = min_with_mask(&column(&q1), &column(&q2));
        let (_, dx1) = self.q[0].backward(&c1, &mask.clone().insert_axis(Axis(1)))?;
        let (_, dx2) = self.q[1].backward(&c2, &(1.0 - &mask).insert_axis(Axis(1)))?;
        let dq_da = &dx1.slice(s![.., self.obs_dim..]) + &dx2.slice(s![.., self.obs_dim..]);
        let actor_loss = check_loss("actor", (alpha * &cur.log_prob - &qmin).sum() / n)?;

        let a = self.act_dim;
        let mut grad = Array2::zeros((batch.len(), 2 * a));
        for b in 0..batch.len() {
            for j in 0..a {
                let act = cur.action[[b, j]];
                let se = cur.std[[b, j]] * cur.eps[[b, j]];
                let dtanh = 1.0 - act * act;
                let dq = dq_da[[b, j]];
                grad[[b, j]] = (alpha * 2.0 * act - dq * dtanh) / n;
                grad[[b, a + j]] = if cur.clamped[[b, j]] {
                    0.0
                } else {
                    (alpha * (-1.0 + 2.0 * act * se) - dq * dtanh * se) / n
                };
            }
        }
        let (g, _) = self.policy.backward(&cur.cache, &grad)?;
        self.policy_opt.step(&mut self.policy, &g)?;

        let mean_log_prob = cur.log_prob.sum() / n;
        let alpha_grad = -alpha * (mean_log_prob + self.target_entropy);
        let mut la = [self.log_alpha];
        self.alpha_opt.update(&mut [&mut la], &[&[alpha_grad]])?;
        self.log_alpha = la[0];

        for (t, q) in self.q_target.iter_mut().zip(&self.q) {
            t.update(q)?;
        }
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: 0.5 * (l1 + l2),
            actor_loss,
            alpha,
            mean_reward: batch.rewards.mean().unwrap_or(0.0),
            mean_q: qmin.mean().unwrap_or(0.0),
        })
    }

    /// Gradient of the temperature loss with respect to `log(alpha)` at the
    /// given mean log-probability.
    pub fn temperature_gradient(&self, mean_log_prob: f64) -> f64 {
        -self.alpha() * (mean_log_prob + self.target_entropy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    fn batch(n: usize, rng: &mut Rng) -> Batch {
        use rand::Rng as _;
        let obs = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let actions = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-0.9..0.9));
        let rewards: Array1<f64> = (0..n).map(|i| (i % 4) as f64 / 3.0).collect();
        Batch {
            next_obs: obs.mapv(|v| v * 0.5),
            obs,
            actions,
            returns: rewards.clone(),
            rewards,
            terminal: Array1::zeros(n),
        }
    }

    #[test]
    fn log_prob_matches_direct_formula() {
        for u in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_tanh_jacobian(u) - direct).abs() < 1e-9);
        }
        assert!(log_tanh_jacobian(40.0).is_finite());
    }

    #[test]
    fn actions_are_squashed_into_bounds() {
        let mut rng = seed::rng(0, "sac");
        let agent = SacAgent::new(3, 2, SacConfig::default(), &mut rng).unwrap();
        for _ in 0..50 {
            let a = agent.act(&[5.0, -5.0, 1.0], &mut rng, false).unwrap();
            assert!(a.iter().all(|v| v.abs() <= 1.0));
        }
        let d1 = agent.act(&[0.1, 0.2, 0.3], &mut rng, true).unwrap();
        let d2 = agent.act(&[0.1, 0.2, 0.3], &mut rng, true).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn update_is_deterministic_given_seeds() {
        let run = || {
            let mut rng = seed::rng(3, "sac-det");
            let mut agent = SacAgent::new(3, 2, SacConfig::default(), &mut rng).unwrap();
            let b = batch(16, &mut rng);
            agent.update(&b, &mut rng).unwrap();
            (
                agent.policy.params_flat(),
                agent.q[0].params_flat(),
                agent.log_alpha,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bandit_limit_critic_regresses_to_rewards() {
        let mut rng = seed::rng(5, "sac-bandit");
        let cfg = SacConfig {
            gamma: 0.0,
            initial_alpha: 1e-8,
            alpha_lr: 0.0,
            actor_lr: 0.0,
            critic_lr: 3e-3,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(3, 2, cfg, &mut rng).unwrap();
        let b = batch(8, &mut rng);
        for _ in 0..3000 {
            agent.update(&b, &mut rng).unwrap();
        }
        let x = hcat(&b.obs, &b.actions);
        for q in &agent.q {
            let pred = column(&q.predict(&x).unwrap());
            let err = (&pred - &b.rewards)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 0.02, "{err}");
        }
    }

    #[test]
    fn high_entropy_pushes_temperature_down() {
        let mut rng = seed::rng(1, "sac-alpha");
        let agent = SacAgent::new(3, 2, SacConfig::default(), &mut rng).unwrap();
        // entropy (= -mean log-prob) far above the target -|A| = -2
        assert!(agent.temperature_gradient(-10.0) > 0.0);
        assert!(agent.temperature_gradient(5.0) < 0.0);
        let mut agent = SacAgent::new(
            3,
            2,
            SacConfig {
                alpha_lr: 1e-2,
                ..SacConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let b = batch(32, &mut rng);
        let before = agent.alpha();
        let lp = agent.mean_log_prob(&b.obs, &mut rng).unwrap();
        assert!(-lp > agent.target_entropy());
        agent.update(&b, &mut rng).unwrap();
        assert!(agent.alpha() < before && agent.alpha() > 0.0);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        // directional check of the reparameterized actor loss
        let mut rng = seed::rng(7, "sac-actor");
        let cfg = SacConfig {
            hidden: vec![8],
            ..SacConfig::default()
        };
        let agent = SacAgent::new(3, 2, cfg, &mut rng).unwrap();
        let obs = array![[0.2, -0.4, 0.9], [-0.7, 0.1, 0.3]];
        let eps = normal_matrix(2, 2, 1.0, &mut rng);
        let alpha = 0.3;
        let loss = |policy: &DenseNet| -> f64 {
            let out = policy.predict(&obs).unwrap();
            let mut total = 0.0;
            for b in 0..2 {
                let mut act = vec![0.0; 2];
                let mut lp = 0.0;
                for j in 0..2 {
                    let ls = out[[b, 2 + j]].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let u = out[[b, j]] + ls.exp() * eps[[b, j]];
                    act[j] = u.tanh();
                    lp += -0.5 * eps[[b, j]].powi(2)
                        - 0.5 * (2.0 * std::f64::consts::PI).ln()
                        - ls
                        - log_tanh_jacobian(u);
                }
                let mut x = obs.row(b).to_vec();
                x.extend(&act);
                let q1 = agent.q[0].predict_one(&x).unwrap()[0];
                let q2 = agent.q[1].predict_one(&x).unwrap()[0];
                total += alpha * lp - q1.min(q2);
            }
            total / 2.0
        };
        // analytic gradient assembled exactly as in `update`
        let (out, cache) = agent.policy.forward(&obs).unwrap();
        let mut grad = Array2::zeros((2, 4));
        for b in 0..2 {
            let mut x = obs.row(b).to_vec();
            let mut acts = [0.0; 2];
            let mut se = [0.0; 2];
            for j in 0..2 {
                let ls = out[[b, 2 + j]].clamp(LOG_STD_MIN, LOG_STD_MAX);
                se[j] = ls.exp() * eps[[b, j]];
                acts[j] = (out[[b, j]] + se[j]).tanh();
            }
            x.extend(acts);
            let xa = Array2::from_shape_vec((1, 5), x).unwrap();
            let (q1, c1) = agent.q[0].forward(&xa).unwrap();
            let (q2, c2) = agent.q[1].forward(&xa).unwrap();
            let (which, cache) = if q1[[0, 0]] <= q2[[0, 0]] {
                (0, c1)
            } else {
                (1, c2)
            };
            let (_, dx) = agent.q[which].backward(&cache, &array![[1.0]]).unwrap();
            for j in 0..2 {
                let dt = 1.0 - acts[j] * acts[j];
                let dq = dx[[0, 3 + j]];
                grad[[b, j]] = (alpha * 2.0 * acts[j] - dq * dt) / 2.0;
                grad[[b, 2 + j]] = (alpha * (-1.0 + 2.0 * acts[j] * se[j]) - dq * dt * se[j]) / 2.0;
            }
        }
        let (g, _) = agent.policy.backward(&cache, &grad).unwrap();
        let analytic = g.flat();
        let base = agent.policy.params_flat();
        let mut probe = agent.policy.clone();
        let mut numeric = Vec::new();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe);
            p[i] -= 2e-6;
            probe.set_params_flat(&p).unwrap();
            let down = loss(&probe);
            numeric.push((up - down) / 2e-6);
        }
        let err = crate::nn::relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn terminal_masks_bootstrap() {
        let mut rng = seed::rng(2, "sac-term");
        let cfg = SacConfig {
            gamma: 0.9,
            critic_lr: 3e-3,
            actor_lr: 0.0,
            alpha_lr: 0.0,
            initial_alpha: 1e-8,
            tau: 1.0,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(3, 2, cfg, &mut rng).unwrap();
        let mut b = batch(4, &mut rng);
        b.terminal.fill(1.0);
        for _ in 0..2000 {
            agent.update(&b, &mut rng).unwrap();
        }
        let pred = column(&agent.q[0].predict(&hcat(&b.obs, &b.actions)).unwrap());
        let err = (&pred - &b.rewards)
            .mapv(f64::abs)
            .fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 0.02, "{err}");
    }
}
