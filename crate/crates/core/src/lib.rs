//! Guidance rewards computed from trajectory returns, and the agents that
//! consume them.
//!
//! Every state-action pair is credited with the (min-max normalized) returns
//! of the trajectories that contain it. The resulting dense reward replaces a
//! sparse or delayed environmental reward inside ordinary RL algorithms:
//!
//! - [`credit`]: return statistics, per-pair return buffers, Monte-Carlo and
//!   exact (enumeration) guidance rewards, and the smoothed objective.
//! - [`tabular`]: tabular Q-learning with environmental or guidance rewards.
//! - [`agents`]: return-tagged replay, SAC, TD3, multi-agent TD3 with a
//!   permutation-invariant critic, and a log-space categorical critic.
//! - [`nn`]: a small dense network with exact backpropagation and Adam.
//! - [`envs`]: the diamond MDP, random enumerable MDPs, a grid-world, a
//!   point-mass goal task and a multi-rover domain.
//! - [`mdp`]: environments, trajectories, returns and reward-delay wrappers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod credit;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod nn;
pub mod seed;
pub mod tabular;

pub use credit::{CreditTable, ReturnStats, RewardSource, TrajectoryWeighting};
pub use error::{Error, Result};
pub use mdp::{EnvSpec, Environment, Space, Step, Trajectory, Transition};
