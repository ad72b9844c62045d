//! Finite, deterministic-transition MDPs whose trajectory set can be
//! enumerated exhaustively.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, Space, SpaceElement, Step, Trajectory, Transition};
use crate::seed::Rng;

pub const DEFAULT_TRAJECTORY_CAP: usize = 1_000_000;

/// An MDP with deterministic transitions and finite action sets.
///
/// Rewards may depend on the history of the episode, which lets
/// trajectory-level returns (such as the diamond MDP's) be expressed
/// without enlarging the state space.
pub trait EnumerableMdp {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    /// Actions available in `state`, in ascending order.
    fn actions(&self, state: usize) -> Vec<usize>;
    /// Successor of `(state, action)` and whether it is terminal.
    fn successor(&self, state: usize, action: usize) -> (usize, bool);
    /// Reward for `(state, action)` after the pairs in `history`.
    fn reward(&self, history: &[(usize, usize)], state: usize, action: usize) -> f64;
    fn horizon(&self) -> usize;
}

/// Depth-first enumeration of every trajectory, actions in ascending order.
///
/// A trajectory ends at a terminal successor or when it reaches the horizon.
pub fn enumerate_trajectories<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    cap: usize,
) -> Result<Vec<Trajectory<usize, usize>>> {
    let horizon = mdp.horizon();
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut prefix: Vec<Transition<usize, usize>> = Vec::with_capacity(horizon);
    let mut history: Vec<(usize, usize)> = Vec::with_capacity(horizon);
    dfs(
        mdp,
        mdp.start_state(),
        cap,
        &mut prefix,
        &mut history,
        &mut out,
    )?;
    Ok(out)
}

fn dfs<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    state: usize,
    cap: usize,
    prefix: &mut Vec<Transition<usize, usize>>,
    history: &mut Vec<(usize, usize)>,
    out: &mut Vec<Trajectory<usize, usize>>,
) -> Result<()> {
    let actions = mdp.actions(state);
    if actions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "state {state} has no available action"
        )));
    }
    for action in actions {
        let (next, terminal) = mdp.successor(state, action);
        let reward = mdp.reward(history, state, action);
        let at_horizon = prefix.len() + 1 == mdp.horizon();
        prefix.push(Transition {
            state,
            action,
            reward,
            next_state: next,
            terminal,
            truncated: at_horizon && !terminal,
        });
        history.push((state, action));
        if terminal || at_horizon {
            if out.len() == cap {
                return Err(Error::TooManyTrajectories { cap });
            }
            out.push(Trajectory::from_transitions(mdp.horizon(), prefix.clone())?);
        } else {
            dfs(mdp, next, cap, prefix, history, out)?;
        }
        prefix.pop();
        history.pop();
    }
    Ok(())
}

/// A tabular MDP with Markov rewards `r(s, a)`.
#[derive(Clone, Debug)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    start: usize,
    horizon: usize,
    available: Vec<Vec<usize>>,
    successors: Vec<Vec<(usize, bool)>>,
    rewards: Vec<Vec<f64>>,
}

impl FiniteMdp {
    /// `successors[s][a]` and `rewards[s][a]` are indexed by global action;
    /// entries for unavailable actions are ignored.
    pub fn new(
        start: usize,
        horizon: usize,
        available: Vec<Vec<usize>>,
        successors: Vec<Vec<(usize, bool)>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_states = available.len();
        let n_actions = successors.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 || horizon == 0 || start >= n_states {
            return Err(Error::InvalidArgument("degenerate finite MDP".into()));
        }
        if successors.len() != n_states || rewards.len() != n_states {
            return Err(Error::Shape("per-state tables disagree in length".into()));
        }
        for s in 0..n_states {
            if successors[s].len() != n_actions || rewards[s].len() != n_actions {
                return Err(Error::Shape(format!("row {s} has the wrong width")));
            }
            if available[s].is_empty() || available[s].iter().any(|&a| a >= n_actions) {
                return Err(Error::InvalidArgument(format!(
                    "state {s} has an invalid action set"
                )));
            }
            if successors[s].iter().any(|&(n, _)| n >= n_states) {
                return Err(Error::InvalidArgument(format!(
                    "state {s} has an out-of-range successor"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            start,
            horizon,
            available,
            successors,
            rewards,
        })
    }

    /// A random MDP: every state gets a nonempty random subset of the
    /// actions, random successors (terminal with probability 0.15) and
    /// rewards drawn uniformly from `[-1, 2)`.
    pub fn random(rng: &mut Rng, n_states: usize, n_actions: usize, horizon: usize) -> Self {
        assert!(n_states > 0 && n_actions > 0 && horizon > 0);
        let mut available = Vec::with_capacity(n_states);
        let mut successors = Vec::with_capacity(n_states);
        let mut rewards = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut acts: Vec<usize> = (0..n_actions).filter(|_| rng.random_bool(0.7)).collect();
            if acts.is_empty() {
                acts.push(rng.random_range(0..n_actions));
            }
            available.push(acts);
            successors.push(
                (0..n_actions)
                    .map(|_| (rng.random_range(0..n_states), rng.random_bool(0.15)))
                    .collect(),
            );
            rewards.push(
                (0..n_actions)
                    .map(|_| rng.random_range(-1.0..2.0))
                    .collect(),
            );
        }
        let start = rng.random_range(0..n_states);
        Self::new(start, horizon, available, successors, rewards).expect("valid by construction")
    }
}

impl EnumerableMdp for FiniteMdp {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn start_state(&self) -> usize {
        self.start
    }

    fn actions(&self, state: usize) -> Vec<usize> {
        self.available[state].clone()
    }

    fn successor(&self, state: usize, action: usize) -> (usize, bool) {
        self.successors[state][action]
    }

    fn reward(&self, _history: &[(usize, usize)], state: usize, action: usize) -> f64 {
        self.rewards[state][action]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Steps any [`EnumerableMdp`] as an [`Environment`].
#[derive(Clone, Debug)]
pub struct EnumerableEnv<M> {
    mdp: M,
    spec: EnvSpec,
    state: usize,
    history: Vec<(usize, usize)>,
}

impl<M: EnumerableMdp> EnumerableEnv<M> {
    pub fn new(mdp: M, discount: f64) -> Result<Self> {
        let spec = EnvSpec::new(
            Space::Discrete { n: mdp.n_states() },
            Space::Discrete { n: mdp.n_actions() },
            mdp.horizon(),
            discount,
        )?;
        let state = mdp.start_state();
        Ok(Self {
            mdp,
            spec,
            state,
            history: Vec::new(),
        })
    }

    pub fn mdp(&self) -> &M {
        &self.mdp
    }
}

impl<M: EnumerableMdp> Environment for EnumerableEnv<M> {
    type State = usize;
    type Action = usize;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> usize {
        self.state = self.mdp.start_state();
        self.history.clear();
        self.state
    }

    fn step(&mut self, action: &usize) -> Result<Step<usize>> {
        action.check_in(&self.spec.action)?;
        if !self.mdp.actions(self.state).contains(action) {
            return Err(Error::ActionOutOfBounds {
                action: action.to_string(),
                space: format!("actions available in state {}", self.state),
            });
        }
        if self.history.len() == self.mdp.horizon() {
            return Err(Error::InvalidArgument("episode already finished".into()));
        }
        let reward = self.mdp.reward(&self.history, self.state, *action);
        let (next, terminal) = self.mdp.successor(self.state, *action);
        self.history.push((self.state, *action));
        self.state = next;
        let truncated = !terminal && self.history.len() == self.mdp.horizon();
        Ok(Step {
            next_state: next,
            reward,
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_single_action_one_step() {
        let mdp =
            FiniteMdp::new(0, 1, vec![vec![0]], vec![vec![(0, false)]], vec![vec![1.5]]).unwrap();
        let all = enumerate_trajectories(&mdp, DEFAULT_TRAJECTORY_CAP).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].undiscounted_return(), 1.5);
    }

    fn binary_chain(len: usize) -> FiniteMdp {
        let n = len + 1;
        FiniteMdp::new(
            0,
            len,
            vec![vec![0, 1]; n],
            (0..n).map(|s| vec![((s + 1).min(len), false); 2]).collect(),
            (0..n).map(|_| vec![0.0, 1.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn binary_chain_has_two_to_the_length_trajectories() {
        let all = enumerate_trajectories(&binary_chain(3), DEFAULT_TRAJECTORY_CAP).unwrap();
        assert_eq!(all.len(), 8);
        let returns: Vec<f64> = all.iter().map(|t| t.undiscounted_return()).collect();
        assert_eq!(returns, vec![0.0, 1.0, 1.0, 2.0, 1.0, 2.0, 2.0, 3.0]);
        assert!(all
            .iter()
            .all(|t| t.transitions().last().unwrap().truncated));
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_trajectories(&binary_chain(3), 7).unwrap_err();
        assert!(matches!(err, Error::TooManyTrajectories { cap: 7 }));
    }

    #[test]
    fn random_mdps_enumerate_within_bounds() {
        let mut rng = crate::seed::rng(3, "test");
        for _ in 0..20 {
            let mdp = FiniteMdp::random(&mut rng, 10, 3, 5);
            let all = enumerate_trajectories(&mdp, DEFAULT_TRAJECTORY_CAP).unwrap();
            assert!(!all.is_empty() && all.len() <= 243);
            assert!(all.iter().all(|t| t.len() <= 5));
        }
    }

    #[test]
    fn env_adapter_replays_enumerated_trajectories() {
        let mdp = binary_chain(3);
        let all = enumerate_trajectories(&mdp, DEFAULT_TRAJECTORY_CAP).unwrap();
        let mut env = EnumerableEnv::new(mdp, 0.9).unwrap();
        for t in &all {
            let actions: Vec<usize> = t.pairs().map(|(_, a)| a).collect();
            let mut i = 0;
            let rolled = crate::mdp::run_episode(
                &mut env,
                |_, _| {
                    i += 1;
                    actions[i - 1]
                },
                3,
                0,
            )
            .unwrap();
            assert_eq!(&rolled, t);
        }
    }
}
