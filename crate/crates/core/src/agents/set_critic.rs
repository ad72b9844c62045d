//! Permutation-invariant critic over a set of homogeneous agents:
//! `Q(s, a) = g(mean_i f(o_i, a_i))`.
//!
//! Joint batches are flat: row `b` of `obs` is `o_1 .. o_k` concatenated, and
//! likewise for actions.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::{polyak_update, Activation, Adam, DenseNet, ForwardCache, Gradients, Head};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SharedSetCritic {
    agents: usize,
    obs_dim: usize,
    act_dim: usize,
    f: DenseNet,
    g: DenseNet,
}

pub struct SetCache {
    f: ForwardCache,
    g: ForwardCache,
    batch: usize,
}

impl SetCache {
    pub fn output(&self) -> &Array2<f64> {
        self.g.output()
    }
}

/// Gradients of both the encoder and the head.
#[derive(Clone, Debug)]
pub struct SetGradients {
    pub f: Gradients,
    pub g: Gradients,
}

/// Adam state for a [`SharedSetCritic`].
#[derive(Clone, Debug)]
pub struct SetAdam {
    f: Adam,
    g: Adam,
}

impl SetAdam {
    pub fn new(critic: &SharedSetCritic, lr: f64) -> Self {
        Self {
            f: Adam::for_net(&critic.f, lr),
            g: Adam::for_net(&critic.g, lr),
        }
    }

    pub fn step(&mut self, critic: &mut SharedSetCritic, grads: &SetGradients) -> Result<()> {
        if !grads.f.is_finite() || !grads.g.is_finite() {
            return Err(Error::NonFinite("set critic gradient".into()));
        }
        self.f.step(&mut critic.f, &grads.f)?;
        self.g.step(&mut critic.g, &grads.g)
    }
}

impl SharedSetCritic {
    /// Encoder `obs + act -> hidden.. -> embed` and head
    /// `embed -> hidden.. -> outputs`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        agents: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        embed: usize,
        outputs: usize,
        activation: Activation,
        head: Head,
        rng: &mut Rng,
    ) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidArgument(
                "a set critic needs at least one agent".into(),
            ));
        }
        let mut fs = vec![obs_dim + act_dim];
        fs.extend(hidden);
        fs.push(embed);
        let mut gs = vec![embed];
        gs.extend(hidden);
        gs.push(outputs);
        Ok(Self {
            agents,
            obs_dim,
            act_dim,
            f: DenseNet::new(&fs, activation, activation, Head::Vector, rng)?,
            g: DenseNet::new(&gs, activation, Activation::Linear, head, rng)?,
        })
    }

    /// The same encoder and head applied to a different number of agents.
    pub fn with_agents(&self, agents: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::InvalidArgument(
                "a set critic needs at least one agent".into(),
            ));
        }
        Ok(Self {
            agents,
            ..self.clone()
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.f
    }

    pub fn head(&self) -> &DenseNet {
        &self.g
    }

    fn rows(&self, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array2<f64>> {
        let k = self.agents;
        if obs.ncols() != k * self.obs_dim
            || actions.ncols() != k * self.act_dim
            || obs.nrows() != actions.nrows()
        {
            return Err(Error::Shape(format!(
                "joint batch {:?}/{:?} does not match {k} agents of {}+{} dims",
                obs.shape(),
                actions.shape(),
                self.obs_dim,
                self.act_dim
            )));
        }
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut rows = Array2::zeros((obs.nrows() * k, o + a));
        for b in 0..obs.nrows() {
            for i in 0..k {
                let mut r = rows.row_mut(b * k + i);
                r.slice_mut(s![..o])
                    .assign(&obs.slice(s![b, i * o..(i + 1) * o]));
                r.slice_mut(s![o..])
                    .assign(&actions.slice(s![b, i * a..(i + 1) * a]));
            }
        }
        Ok(rows)
    }

    pub fn forward(
        &self,
        obs: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, SetCache)> {
        let rows = self.rows(obs, actions)?;
        let (enc, fc) = self.f.forward(&rows)?;
        let k = self.agents;
        let d = enc.ncols();
        let mut pooled = Array2::zeros((obs.nrows(), d));
        for b in 0..obs.nrows() {
            let sum = enc.slice(s![b * k..(b + 1) * k, ..]).sum_axis(Axis(0));
            pooled.row_mut(b).assign(&(sum / k as f64));
        }
        let (out, gc) = self.g.forward(&pooled)?;
        Ok((
            out,
            SetCache {
                f: fc,
                g: gc,
                batch: obs.nrows(),
            },
        ))
    }

    pub fn predict(&self, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(obs, actions)?.0)
    }

    fn backward_pooled(
        &self,
        cache: &SetCache,
        d_pooled: Array2<f64>,
        g: Gradients,
    ) -> Result<(SetGradients, Array2<f64>, Array2<f64>)> {
        let k = self.agents;
        let mut d_enc = Array2::zeros((cache.batch * k, d_pooled.ncols()));
        for b in 0..cache.batch {
            let share = d_pooled.row(b).mapv(|v| v / k as f64);
            for i in 0..k {
                d_enc.row_mut(b * k + i).assign(&share);
            }
        }
        let (f, d_rows) = self.f.backward(&cache.f, &d_enc)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut d_obs = Array2::zeros((cache.batch, k * o));
        let mut d_act = Array2::zeros((cache.batch, k * a));
        for b in 0..cache.batch {
            for i in 0..k {
                let r = d_rows.row(b * k + i);
                d_obs
                    .slice_mut(s![b, i * o..(i + 1) * o])
                    .assign(&r.slice(s![..o]));
                d_act
                    .slice_mut(s![b, i * a..(i + 1) * a])
                    .assign(&r.slice(s![o..]));
            }
        }
        Ok((SetGradients { f, g }, d_obs, d_act))
    }

    /// Parameter gradients plus `dL/d obs` and `dL/d actions` in the flat
    /// joint layout.
    pub fn backward(
        &self,
        cache: &SetCache,
        grad_out: &Array2<f64>,
    ) -> Result<(SetGradients, Array2<f64>, Array2<f64>)> {
        let (g, d_pooled) = self.g.backward(&cache.g, grad_out)?;
        self.backward_pooled(cache, d_pooled, g)
    }

    /// Like [`SharedSetCritic::backward`] from the head's logits.
    pub fn backward_from_logits(
        &self,
        cache: &SetCache,
        grad_logits: &Array2<f64>,
    ) -> Result<(SetGradients, Array2<f64>, Array2<f64>)> {
        let (g, d_pooled) = self.g.backward_from_logits(&cache.g, grad_logits)?;
        self.backward_pooled(cache, d_pooled, g)
    }

    pub fn polyak_from(&mut self, source: &SharedSetCritic, tau: f64) -> Result<()> {
        polyak_update(&mut self.f, &source.f, tau)?;
        polyak_update(&mut self.g, &source.g, tau)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.f.params_flat();
        p.extend(self.g.params_flat());
        p
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        let nf = self.f.num_params();
        if values.len() != nf + self.g.num_params() {
            return Err(Error::Shape("wrong parameter count for set critic".into()));
        }
        self.f.set_params_flat(&values[..nf])?;
        self.g.set_params_flat(&values[nf..])
    }
}

/// Reorders the agent blocks of a flat joint matrix (`perm[i]` is the source
/// agent placed at slot `i`).
pub fn permute_agents(joint: &Array2<f64>, per_agent: usize, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(joint.raw_dim());
    for (slot, &src) in perm.iter().enumerate() {
        out.slice_mut(s![.., slot * per_agent..(slot + 1) * per_agent])
            .assign(&joint.slice(s![.., src * per_agent..(src + 1) * per_agent]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::seq::SliceRandom;
    use rand::Rng as _;

    fn critic(k: usize, rng: &mut Rng) -> SharedSetCritic {
        SharedSetCritic::new(k, 4, 2, &[16], 8, 1, Activation::Tanh, Head::Scalar, rng).unwrap()
    }

    fn joint(b: usize, k: usize, dim: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((b, k * dim), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_is_invariant_under_agent_permutations() {
        let mut rng = seed::rng(0, "set-perm");
        for k in 1..=8 {
            let c = critic(k, &mut rng);
            let (o, a) = (joint(5, k, 4, &mut rng), joint(5, k, 2, &mut rng));
            let base = c.predict(&o, &a).unwrap();
            for _ in 0..20 {
                let mut perm: Vec<usize> = (0..k).collect();
                perm.shuffle(&mut rng);
                let q = c
                    .predict(&permute_agents(&o, 4, &perm), &permute_agents(&a, 2, &perm))
                    .unwrap();
                let diff = (&q - &base).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
                assert!(diff < 1e-12, "k={k} diff={diff}");
            }
        }
    }

    #[test]
    fn duplicated_agent_equals_single_agent_value() {
        let mut rng = seed::rng(1, "set-dup");
        let two = critic(2, &mut rng);
        let one = two.with_agents(1).unwrap();
        let (o, a) = (joint(3, 1, 4, &mut rng), joint(3, 1, 2, &mut rng));
        let o2 = ndarray::concatenate![Axis(1), o, o];
        let a2 = ndarray::concatenate![Axis(1), a, a];
        assert_eq!(two.predict(&o2, &a2).unwrap(), one.predict(&o, &a).unwrap());
    }

    #[test]
    fn single_agent_is_head_of_encoder() {
        let mut rng = seed::rng(2, "set-one");
        let c = critic(1, &mut rng);
        let (o, a) = (joint(4, 1, 4, &mut rng), joint(4, 1, 2, &mut rng));
        let direct =
            c.g.predict(&c.f.predict(&crate::agents::hcat(&o, &a)).unwrap())
                .unwrap();
        assert_eq!(c.predict(&o, &a).unwrap(), direct);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::rng(3, "set-grad");
        let c = critic(3, &mut rng);
        let (o, a) = (joint(2, 3, 4, &mut rng), joint(2, 3, 2, &mut rng));
        let w = Array2::from_shape_simple_fn((2, 1), || rng.random_range(-1.0..1.0));
        let loss = |c: &SharedSetCritic, a: &Array2<f64>| (&c.predict(&o, a).unwrap() * &w).sum();
        let (_, cache) = c.forward(&o, &a).unwrap();
        let (g, _, d_act) = c.backward(&cache, &w).unwrap();
        let mut analytic = g.f.flat();
        analytic.extend(g.g.flat());
        analytic.extend(d_act.iter());
        let mut numeric = Vec::new();
        let base = c.params_flat();
        let mut probe = c.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-5;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe, &a);
            p[i] -= 2e-5;
            probe.set_params_flat(&p).unwrap();
            numeric.push((up - loss(&probe, &a)) / 2e-5);
        }
        for idx in 0..a.len() {
            let mut ap = a.clone();
            ap.as_slice_mut().unwrap()[idx] += 1e-5;
            let up = loss(&c, &ap);
            ap.as_slice_mut().unwrap()[idx] -= 2e-5;
            numeric.push((up - loss(&c, &ap)) / 2e-5);
        }
        assert!(crate::nn::relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn rejects_mismatched_joint_widths() {
        let mut rng = seed::rng(4, "set-shape");
        let c = critic(3, &mut rng);
        assert!(c
            .predict(&joint(2, 2, 4, &mut rng), &joint(2, 3, 2, &mut rng))
            .is_err());
    }
}
