//! Environments, trajectories, returns and reward-delay wrappers.
//!
//! Episode returns are accumulated undiscounted (`R_e <- R_e + r`); the
//! discount only enters Bellman targets. [`discounted_return`] is provided
//! separately for analysis.

use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// A state or action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl Space {
    pub fn continuous_box(dim: usize, low: f64, high: f64) -> Self {
        Space::Continuous {
            low: vec![low; dim],
            high: vec![high; dim],
        }
    }

    /// Cardinality for discrete spaces, dimension for continuous ones.
    pub fn size(&self) -> usize {
        match self {
            Space::Discrete { n } => *n,
            Space::Continuous { low, .. } => low.len(),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Discrete { n } => write!(f, "Discrete({n})"),
            Space::Continuous { low, high } => write!(f, "Box(low={low:?}, high={high:?})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state: Space,
    pub action: Space,
    pub horizon: usize,
    pub discount: f64,
}

impl EnvSpec {
    pub fn new(state: Space, action: Space, horizon: usize, discount: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        if let Space::Continuous { low, high } = &action {
            if low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                return Err(Error::InvalidArgument("malformed action bounds".into()));
            }
        }
        Ok(Self {
            state,
            action,
            horizon,
            discount,
        })
    }
}

/// Values that can be checked against a [`Space`].
pub trait SpaceElement {
    fn check_in(&self, space: &Space) -> Result<()>;
}

fn out_of_bounds(action: &impl fmt::Debug, space: &Space) -> Error {
    Error::ActionOutOfBounds {
        action: format!("{action:?}"),
        space: space.to_string(),
    }
}

impl SpaceElement for usize {
    fn check_in(&self, space: &Space) -> Result<()> {
        match space {
            Space::Discrete { n } if self < n => Ok(()),
            _ => Err(out_of_bounds(self, space)),
        }
    }
}

impl SpaceElement for Vec<f64> {
    fn check_in(&self, space: &Space) -> Result<()> {
        match space {
            Space::Continuous { low, high } if low.len() == self.len() => {
                if self.iter().any(|x| x.is_nan()) {
                    return Err(Error::NonFinite("action".into()));
                }
                let inside = self
                    .iter()
                    .zip(low.iter().zip(high))
                    .all(|(x, (l, h))| l <= x && x <= h);
                if inside {
                    Ok(())
                } else {
                    Err(out_of_bounds(self, space))
                }
            }
            _ => Err(out_of_bounds(self, space)),
        }
    }
}

/// Joint actions of homogeneous agents; every member must lie in `space`.
impl SpaceElement for Vec<Vec<f64>> {
    fn check_in(&self, space: &Space) -> Result<()> {
        self.iter().try_for_each(|a| a.check_in(space))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step<S> {
    pub next_state: S,
    pub reward: f64,
    /// True terminal state: value bootstrapping stops here.
    pub terminal: bool,
    /// The episode was cut by the horizon; the next state still has value.
    pub truncated: bool,
}

impl<S> Step<S> {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    type State: Clone;
    type Action: Clone + SpaceElement;

    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. All randomness of the episode derives from `seed`.
    fn reset(&mut self, seed: u64) -> Self::State;

    fn step(&mut self, action: &Self::Action) -> Result<Step<Self::State>>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    type State = E::State;
    type Action = E::Action;

    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Self::State {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &Self::Action) -> Result<Step<Self::State>> {
        (**self).step(action)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
    #[serde(default)]
    pub truncated: bool,
}

/// An episode: ordered transitions plus their undiscounted return.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S, A> {
    transitions: Vec<Transition<S, A>>,
    undiscounted_return: f64,
    horizon: usize,
}

impl<S, A> Trajectory<S, A> {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            transitions: Vec::new(),
            undiscounted_return: 0.0,
            horizon,
        })
    }

    pub fn from_transitions(horizon: usize, transitions: Vec<Transition<S, A>>) -> Result<Self> {
        let mut traj = Self::new(horizon)?;
        for t in transitions {
            traj.push(t)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, t: Transition<S, A>) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        if self.transitions.len() == self.horizon {
            return Err(Error::InvalidArgument(format!(
                "trajectory already holds {} transitions (horizon)",
                self.horizon
            )));
        }
        if self.is_finished() {
            return Err(Error::InvalidArgument(
                "cannot extend a trajectory past its final transition".into(),
            ));
        }
        self.undiscounted_return += t.reward;
        self.transitions.push(t);
        Ok(())
    }

    fn is_finished(&self) -> bool {
        self.transitions
            .last()
            .is_some_and(|t| t.terminal || t.truncated)
    }

    pub fn transitions(&self) -> &[Transition<S, A>] {
        &self.transitions
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.undiscounted_return
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }
}

impl<S: Clone, A: Clone> Trajectory<S, A> {
    /// The same trajectory with its reward stream passed through a delay-`k`
    /// accumulator (residue flushed on the last transition).
    pub fn with_delayed_rewards(&self, k: usize) -> Result<Self> {
        let mut delay = RewardDelay::new(k)?;
        let n = self.transitions.len();
        let mut out = Self::new(self.horizon)?;
        for (i, t) in self.transitions.iter().enumerate() {
            let mut t = t.clone();
            t.reward = delay.push(t.reward, i + 1 == n);
            out.push(t)?;
        }
        Ok(out)
    }
}

impl Trajectory<usize, usize> {
    /// The (state, action) pairs in visitation order, repeats included.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.transitions.iter().map(|t| (t.state, t.action))
    }

    pub fn contains_pair(&self, state: usize, action: usize) -> bool {
        self.pairs().any(|p| p == (state, action))
    }
}

/// `sum_t gamma^t r_t`. `gamma = 1` is allowed for finite-horizon use.
pub fn discounted_return<S, A>(traj: &Trajectory<S, A>, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "discount must lie in [0, 1], got {gamma}"
        )));
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for r in traj.rewards() {
        if r.is_nan() {
            return Err(Error::NonFinite("reward".into()));
        }
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

/// Rolls out one episode of at most `horizon` steps.
///
/// The environment is reset with `seed`; the policy receives its own stream
/// derived from the same seed. Actions outside the action space are rejected.
pub fn run_episode<E, P>(
    env: &mut E,
    mut policy: P,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    P: FnMut(&E::State, &mut Rng) -> E::Action,
{
    let mut traj = Trajectory::new(horizon)?;
    let mut rng = Rng::seed_from_u64(seed::derive(seed, "policy"));
    let mut state = env.reset(seed);
    for _ in 0..horizon {
        let action = policy(&state, &mut rng);
        action.check_in(&env.spec().action)?;
        let step = env.step(&action)?;
        let done = step.done();
        traj.push(Transition {
            state,
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            terminal: step.terminal,
            truncated: step.truncated,
        })?;
        if done {
            break;
        }
        state = step.next_state;
    }
    Ok(traj)
}

/// Delay-`k` reward accumulator: zero for `k - 1` steps, then the sum.
#[derive(Clone, Debug)]
pub struct RewardDelay {
    k: usize,
    acc: f64,
    pending: usize,
}

impl RewardDelay {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("delay k must be at least 1".into()));
        }
        Ok(Self {
            k,
            acc: 0.0,
            pending: 0,
        })
    }

    pub fn reset(&mut self) {
        self.acc = 0.0;
        self.pending = 0;
    }

    /// Feeds one dense reward; returns the reward to emit for this step.
    pub fn push(&mut self, reward: f64, last: bool) -> f64 {
        self.acc += reward;
        self.pending += 1;
        if last || self.pending == self.k {
            let out = self.acc;
            self.reset();
            out
        } else {
            0.0
        }
    }
}

/// Applies a delay-`k` accumulator to a complete reward stream.
pub fn delay_rewards(rewards: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut delay = RewardDelay::new(k)?;
    let n = rewards.len();
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| delay.push(r, i + 1 == n))
        .collect())
}

/// Environment wrapper emitting accumulated rewards every `k` steps.
#[derive(Clone, Debug)]
pub struct Delayed<E> {
    inner: E,
    delay: RewardDelay,
}

impl<E> Delayed<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

pub fn wrap_delay<E: Environment>(env: E, k: usize) -> Result<Delayed<E>> {
    Ok(Delayed {
        inner: env,
        delay: RewardDelay::new(k)?,
    })
}

/// Zero reward on every step except the last, which carries the episode sum.
pub fn wrap_episodic<E: Environment>(env: E) -> Delayed<E> {
    let k = env.spec().horizon;
    Delayed {
        inner: env,
        delay: RewardDelay::new(k).expect("EnvSpec guarantees horizon >= 1"),
    }
}

impl<E: Environment> Environment for Delayed<E> {
    type State = E::State;
    type Action = E::Action;

    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Self::State {
        self.delay.reset();
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Self::Action) -> Result<Step<Self::State>> {
        let mut step = self.inner.step(action)?;
        step.reward = self.delay.push(step.reward, step.done());
        Ok(step)
    }
}

#[derive(Serialize, Deserialize)]
struct NdjsonHeader {
    env: EnvSpec,
    seed: u64,
    horizon: usize,
}

/// Writes a header line (`env`, `seed`, `horizon`) followed by one JSON
/// object per transition.
pub fn write_ndjson<S, A, W>(
    traj: &Trajectory<S, A>,
    spec: &EnvSpec,
    seed: u64,
    mut out: W,
) -> Result<()>
where
    S: Serialize,
    A: Serialize,
    W: Write,
{
    let header = NdjsonHeader {
        env: spec.clone(),
        seed,
        horizon: traj.horizon(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in traj.transitions() {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<S, A, R>(input: R) -> Result<(EnvSpec, u64, Trajectory<S, A>)>
where
    S: DeserializeOwned,
    A: DeserializeOwned,
    R: BufRead,
{
    let mut lines = input.lines();
    let header: NdjsonHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Parse("missing trajectory header line".into())),
    };
    let mut traj = Trajectory::new(header.horizon)?;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        traj.push(serde_json::from_str(&line)?)?;
    }
    Ok((header.env, header.seed, traj))
}
