//! Desk-scale environments.

pub mod diamond;
pub mod finite;
pub mod gridworld;
pub mod pointmass;
pub mod rover;

pub use diamond::DiamondMdp;
pub use finite::{enumerate_trajectories, EnumerableEnv, EnumerableMdp, FiniteMdp};
pub use gridworld::{GridConfig, GridWorld};
pub use pointmass::{PointMassConfig, PointMassEnv};
pub use rover::{RoverConfig, RoverDomain};

/// Names accepted by the experiment configuration's `env.kind`.
pub const ENV_KINDS: &[(&str, &str)] = &[
    (
        "gridworld",
        "grid-world with dense or episodic distance-to-goal reward",
    ),
    (
        "pointmass",
        "2-D point mass, terminal reward exp(-distance to goal)",
    ),
    ("rover", "multi-rover POI harvesting with coupling"),
];
