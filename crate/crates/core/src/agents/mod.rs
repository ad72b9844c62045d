//! Actor-critic agents trained from return-tagged replay.
//!
//! Each agent's update consumes a [`Batch`] whose `rewards` column already
//! holds either guidance rewards (normalized episode returns) or the stored
//! environmental rewards; the update rules themselves are identical in both
//! modes.

pub mod c51;
pub mod ma;
pub mod replay;
pub mod sac;
pub mod set_critic;
pub mod td3;
pub mod train;

pub use c51::{project_distribution, LogAtoms};
pub use ma::{MaC51, MaConfig, MaTd3};
pub use replay::{Batch, ReplayConfig, ReturnTaggedReplay, TaggedTransition};
pub use sac::{SacAgent, SacConfig};
pub use set_critic::SharedSetCritic;
pub use td3::{Td3Agent, Td3Config};
pub use train::{AgentKind, TrainConfig, TrainResult};

use ndarray::{concatenate, Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, DenseNet};
use crate::seed::Rng;

/// Scalar diagnostics of one gradient step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// `NaN` when the actor was not updated on this call.
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_reward: f64,
    pub mean_q: f64,
}

pub(crate) fn hcat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), *a, *b]
}

pub(crate) fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub(crate) fn column(a: &Array2<f64>) -> Array1<f64> {
    a.column(0).to_owned()
}

pub(crate) fn check_loss(name: &str, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{name} loss is {loss}")))
    }
}

/// One Adam step on the mean squared error between a scalar net and `y`.
pub(crate) fn regress(
    net: &mut DenseNet,
    opt: &mut Adam,
    x: &Array2<f64>,
    y: &Array1<f64>,
) -> Result<f64> {
    let (pred, cache) = net.forward(x)?;
    let resid = &pred.column(0) - y;
    let n = y.len() as f64;
    let loss = check_loss("critic", resid.mapv(|r| r * r).sum() / n)?;
    let grad = resid.mapv(|r| 2.0 * r / n).insert_axis(Axis(1));
    let (g, _) = net.backward(&cache, &grad)?;
    opt.step(net, &g)?;
    Ok(loss)
}

/// Elementwise minimum of two columns and a mask of where the first wins.
pub(crate) fn min_with_mask(a: &Array1<f64>, b: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let min = ndarray::Zip::from(a).and(b).map_collect(|&x, &y| x.min(y));
    let mask = ndarray::Zip::from(a)
        .and(b)
        .map_collect(|&x, &y| if x <= y { 1.0 } else { 0.0 });
    (min, mask)
}

/// Exponential of a log-temperature with overflow guard.
pub(crate) fn checked_exp(x: f64, name: &str) -> Result<f64> {
    let v = x.exp();
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} = exp({x})")))
    }
}
