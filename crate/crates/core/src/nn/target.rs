use super::dense::DenseNet;
use crate::error::{Error, Result};

/// `shadow <- (1 - tau) shadow + tau source`, elementwise.
pub fn polyak_update(shadow: &mut DenseNet, source: &DenseNet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "smoothing coefficient {tau} outside [0, 1]"
        )));
    }
    let src = source.param_slices();
    let mut dst = shadow.param_slices_mut();
    if src.len() != dst.len() || src.iter().zip(&dst).any(|(s, d)| s.len() != d.len()) {
        return Err(Error::Shape(
            "target and source networks differ in shape".into(),
        ));
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        for (x, &y) in d.iter_mut().zip(s.iter()) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }
    Ok(())
}

/// A slowly tracking copy of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTracker {
    shadow: DenseNet,
    pub tau: f64,
}

impl TargetTracker {
    pub fn new(source: &DenseNet, tau: f64) -> Self {
        Self {
            shadow: source.clone(),
            tau,
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.shadow
    }

    pub fn update(&mut self, source: &DenseNet) -> Result<()> {
        polyak_update(&mut self.shadow, source, self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Head};
    use crate::seed;

    fn pair() -> (DenseNet, DenseNet) {
        let mut rng = seed::rng(6, "polyak");
        let a = DenseNet::mlp(2, &[3], 1, Activation::Linear, Head::Scalar, &mut rng).unwrap();
        let b = DenseNet::mlp(2, &[3], 1, Activation::Linear, Head::Scalar, &mut rng).unwrap();
        (a, b)
    }

    fn dist(a: &DenseNet, b: &DenseNet) -> f64 {
        a.params_flat()
            .iter()
            .zip(b.params_flat())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn tau_extremes() {
        let (mut shadow, source) = pair();
        let before = shadow.clone();
        polyak_update(&mut shadow, &source, 0.0).unwrap();
        assert_eq!(shadow, before);
        polyak_update(&mut shadow, &source, 1.0).unwrap();
        assert_eq!(shadow, source);
        assert!(polyak_update(&mut shadow, &source, 1.5).is_err());
    }

    #[test]
    fn half_way_between_zero_and_two() {
        let (mut shadow, mut source) = pair();
        let n = shadow.num_params();
        shadow.set_params_flat(&vec![0.0; n]).unwrap();
        source.set_params_flat(&vec![2.0; n]).unwrap();
        polyak_update(&mut shadow, &source, 0.5).unwrap();
        assert!(shadow.params_flat().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn contraction_toward_source() {
        let (shadow, source) = pair();
        let mut tracker = TargetTracker::new(&shadow, 0.3);
        let mut last = dist(tracker.net(), &source);
        for _ in 0..10 {
            tracker.update(&source).unwrap();
            let d = dist(tracker.net(), &source);
            assert!(d <= 0.7 * last + 1e-15);
            last = d;
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut a, _) = pair();
        let mut rng = seed::rng(0, "other");
        let c = DenseNet::mlp(2, &[4], 1, Activation::Linear, Head::Scalar, &mut rng).unwrap();
        assert!(polyak_update(&mut a, &c, 0.5).is_err());
    }
}
