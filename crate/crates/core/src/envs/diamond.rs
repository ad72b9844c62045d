//! The four-state, four-action diamond MDP.
//!
//! `s1` is the start state, `a1`/`a2` lead to `s2`, and `a3`/`a4` from `s2`
//! end the episode in `s3`/`s4`. The four trajectories have returns
//! `(1, 3, 1, 1)`; the return is paid on the final step.

use super::finite::{EnumerableEnv, EnumerableMdp};
use crate::error::Result;

pub const S1: usize = 0;
pub const S2: usize = 1;
pub const S3: usize = 2;
pub const S4: usize = 3;
pub const A1: usize = 0;
pub const A2: usize = 1;
pub const A3: usize = 2;
pub const A4: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiamondMdp;

impl DiamondMdp {
    /// Return of the trajectory `s1 first s2 second`.
    pub fn trajectory_return(first: usize, second: usize) -> f64 {
        match (first, second) {
            (A1, A4) => 3.0,
            _ => 1.0,
        }
    }

    pub fn env(self) -> Result<EnumerableEnv<Self>> {
        EnumerableEnv::new(self, 0.9)
    }
}

impl EnumerableMdp for DiamondMdp {
    fn n_states(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn start_state(&self) -> usize {
        S1
    }

    fn actions(&self, state: usize) -> Vec<usize> {
        match state {
            S1 => vec![A1, A2],
            S2 => vec![A3, A4],
            _ => Vec::new(),
        }
    }

    fn successor(&self, state: usize, action: usize) -> (usize, bool) {
        match (state, action) {
            (S1, _) => (S2, false),
            (_, A3) => (S3, true),
            _ => (S4, true),
        }
    }

    fn reward(&self, history: &[(usize, usize)], state: usize, action: usize) -> f64 {
        match (state, history.first()) {
            (S2, Some(&(_, first))) => Self::trajectory_return(first, action),
            _ => 0.0,
        }
    }

    fn horizon(&self) -> usize {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::finite::{enumerate_trajectories, DEFAULT_TRAJECTORY_CAP};
    use crate::mdp::run_episode;

    #[test]
    fn four_trajectories_with_expected_returns() {
        let all = enumerate_trajectories(&DiamondMdp, DEFAULT_TRAJECTORY_CAP).unwrap();
        assert_eq!(all.len(), 4);
        let returns: Vec<f64> = all.iter().map(|t| t.undiscounted_return()).collect();
        assert_eq!(returns, vec![1.0, 3.0, 1.0, 1.0]);
        let pairs: Vec<Vec<(usize, usize)>> = all.iter().map(|t| t.pairs().collect()).collect();
        assert_eq!(pairs[0], vec![(S1, A1), (S2, A3)]);
        assert_eq!(pairs[1], vec![(S1, A1), (S2, A4)]);
        assert_eq!(pairs[2], vec![(S1, A2), (S2, A3)]);
        assert_eq!(pairs[3], vec![(S1, A2), (S2, A4)]);
        assert!(all.iter().all(|t| t.transitions()[1].terminal));
    }

    #[test]
    fn rollout_a1_then_a3() {
        let mut env = DiamondMdp.env().unwrap();
        let traj = run_episode(
            &mut env,
            |s: &usize, _| if *s == S1 { A1 } else { A3 },
            2,
            0,
        )
        .unwrap();
        let pairs: Vec<_> = traj.pairs().collect();
        assert_eq!(pairs, vec![(S1, A1), (S2, A3)]);
        assert_eq!(traj.undiscounted_return(), 1.0);
        assert_eq!(traj.transitions()[1].next_state, S3);
    }

    #[test]
    fn unavailable_action_is_rejected() {
        let mut env = DiamondMdp.env().unwrap();
        assert!(run_episode(&mut env, |_, _| A3, 2, 0).is_err());
    }

    #[test]
    fn fixed_seed_rollouts_are_identical() {
        use rand::Rng as _;
        let mut env = DiamondMdp.env().unwrap();
        let mut policy = |s: &usize, rng: &mut crate::seed::Rng| {
            let acts = DiamondMdp.actions(*s);
            acts[rng.random_range(0..acts.len())]
        };
        let a = run_episode(&mut env, &mut policy, 2, 11).unwrap();
        let b = run_episode(&mut env, &mut policy, 2, 11).unwrap();
        assert_eq!(a, b);
    }
}
