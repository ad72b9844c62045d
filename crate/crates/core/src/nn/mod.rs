//! Small dense networks with exact reverse-mode gradients, Adam, and Polyak
//! target tracking. Everything runs in `f64`.

mod adam;
mod dense;
mod target;

pub use adam::Adam;
pub use dense::{softmax_rows, Activation, DenseNet, ForwardCache, Gradients, Head, Layer};
pub use target::{polyak_update, TargetTracker};

use ndarray::Array2;
use rand::Rng as _;

use crate::error::Result;
use crate::seed::Rng;

/// Relative gradient error `||a - n|| / max(||a|| + ||n||, 1e-12)` between
/// backpropagation and central differences (step `1e-5`) for the loss
/// `sum(C * output)` with a random batch of `batch` inputs and a random `C`.
/// Both parameter and input gradients are compared.
pub fn gradient_check(net: &DenseNet, batch: usize, rng: &mut Rng) -> Result<f64> {
    const H: f64 = 1e-5;
    let x = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.random_range(-1.5..1.5));
    let c = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.random_range(-1.0..1.0));
    let loss = |n: &DenseNet, x: &Array2<f64>| -> Result<f64> { Ok((&n.predict(x)? * &c).sum()) };

    let (_, cache) = net.forward(&x)?;
    let (grads, dx) = net.backward(&cache, &c)?;
    let mut analytic = grads.flat();
    analytic.extend(dx.iter());

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = net.clone();
    let base = net.params_flat();
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + H;
        probe.set_params_flat(&p)?;
        let up = loss(&probe, &x)?;
        p[i] = base[i] - H;
        probe.set_params_flat(&p)?;
        let down = loss(&probe, &x)?;
        p[i] = base[i];
        numeric.push((up - down) / (2.0 * H));
    }
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let (r, col) = (idx / x.ncols(), idx % x.ncols());
        xp[[r, col]] = x[[r, col]] + H;
        let up = loss(net, &xp)?;
        xp[[r, col]] = x[[r, col]] - H;
        let down = loss(net, &xp)?;
        xp[[r, col]] = x[[r, col]];
        numeric.push((up - down) / (2.0 * H));
    }
    Ok(relative_error(&analytic, &numeric))
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    diff / scale.max(1e-12)
}
