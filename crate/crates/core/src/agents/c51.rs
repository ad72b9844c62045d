//! Categorical value distribution on a fixed log-space support.
//!
//! Atoms sit at `w_i = i / N` (`i = 1..N`), read in log space as
//! `z_i = ln w_i`, so values are log-returns in `[ln(1/N), 0]`. A transition
//! with guidance reward `r` moves atom `j` to `ln max(r, eps) + gamma z_j`,
//! i.e. to `max(r, eps) w_j^gamma` in `w` space. Because the support is
//! evenly spaced in `w`, target mass is projected there onto the two
//! neighboring atoms, clamping at `w_1` and `w_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogAtoms {
    n: usize,
    w: Vec<f64>,
    z: Vec<f64>,
}

impl LogAtoms {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(
                "at least two atoms are required".into(),
            ));
        }
        let w: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let z = w.iter().map(|v| v.ln()).collect();
        Ok(Self { n, w, z })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Floor applied before taking logs; equals the lowest atom `w_1`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `ln max(r_g, eps)`.
    pub fn transform_reward(&self, r_g: f64) -> f64 {
        r_g.max(self.epsilon()).ln()
    }

    /// Target atom positions in `w` space. A terminal transition collapses
    /// every atom onto `max(r_g, eps)`.
    pub fn target_atoms(&self, r_g: f64, gamma: f64, terminal: bool) -> Vec<f64> {
        let r = r_g.max(self.epsilon());
        if terminal {
            vec![r; self.n]
        } else {
            self.w.iter().map(|w| r * w.powf(gamma)).collect()
        }
    }

    /// Expected log-value `sum_i p_i z_i`.
    pub fn mean(&self, probs: &[f64]) -> f64 {
        probs.iter().zip(&self.z).map(|(p, z)| p * z).sum()
    }

    /// Projects `probs` located at `target_w` onto the support.
    pub fn project(&self, target_w: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
        project_distribution(self.n, target_w, probs)
    }
}

/// Two-neighbor linear projection onto `w_i = i / n`.
///
/// Fails if `probs` does not sum to 1 within `1e-9` or contains a negative
/// or non-finite entry.
pub fn project_distribution(n: usize, target_w: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if target_w.len() != probs.len() {
        return Err(Error::Shape("atom and probability counts differ".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "target distribution must be a probability vector (sums to {total})"
        )));
    }
    let nf = n as f64;
    let mut out = vec![0.0; n];
    for (&tw, &p) in target_w.iter().zip(probs) {
        if !tw.is_finite() {
            return Err(Error::NonFinite("target atom".into()));
        }
        // fractional atom index, 0-based
        let mut b = (tw.clamp(1.0 / nf, 1.0) * nf - 1.0).clamp(0.0, nf - 1.0);
        let nearest = b.round();
        if (b - nearest).abs() < 1e-9 {
            b = nearest;
        }
        let lo = b.floor() as usize;
        let hi = b.ceil() as usize;
        if lo == hi {
            out[lo] += p;
        } else {
            out[lo] += p * (hi as f64 - b);
            out[hi] += p * (b - lo as f64);
        }
    }
    Ok(out)
}
