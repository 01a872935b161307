//! Synthetic datasets.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::rng::{seeded, standard_normal};
use crate::tensor::Tensor;

/// `n` draws of `N(0, I_d)` as an `(n, d)` tensor.
pub fn gen_gaussian_dataset(d: usize, n: usize, seed: u64) -> Result<Tensor> {
    ensure!(d >= 1 && n >= 1, InvalidArgument, "need d >= 1 and n >= 1");
    let mut rng = seeded(seed);
    let data = (0..n * d).map(|_| standard_normal(&mut rng)).collect();
    Tensor::new(vec![n, d], data)
}

/// Parameters of the two-class stripe task.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeSpec {
    pub height: usize,
    pub width: usize,
    /// Stripe profile repeated along the varying axis.
    pub profile: Vec<f64>,
    pub amplitude: (f64, f64),
    pub noise: f64,
}

impl Default for StripeSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            profile: vec![1.0, 0.0, -1.0, 0.0],
            amplitude: (0.5, 1.0),
            noise: 0.05,
        }
    }
}

/// Labelled single-channel stripe images in `[-1, 1]`, shape `(n, H, W, 1)`.
/// Class 0 varies along rows (horizontal stripes), class 1 along columns.
/// Labels alternate so both classes are balanced.
pub fn gen_striped_images(n: usize, spec: &StripeSpec, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    ensure!(n >= 1, InvalidArgument, "need n >= 1");
    ensure!(!spec.profile.is_empty(), InvalidArgument, "empty stripe profile");
    ensure!(
        spec.amplitude.0 <= spec.amplitude.1 && spec.noise >= 0.0,
        InvalidArgument,
        "invalid amplitude range or noise level"
    );
    let (h, w) = (spec.height, spec.width);
    let period = spec.profile.len();
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let label = s % 2;
        let amp = if spec.amplitude.0 == spec.amplitude.1 {
            spec.amplitude.0
        } else {
            rng.random_range(spec.amplitude.0..spec.amplitude.1)
        };
        for i in 0..h {
            for j in 0..w {
                let k = if label == 0 { i } else { j };
                let v = amp * spec.profile[k % period] + spec.noise * standard_normal(&mut rng);
                data.push(v.clamp(-1.0, 1.0));
            }
        }
        labels.push(label);
    }
    Ok((Tensor::new(vec![n, h, w, 1], data)?, labels))
}

/// Two isotropic Gaussian blobs in 2-D centred at `(-sep/2, 0)` and
/// `(sep/2, 0)` with unit variance.
pub fn gen_two_gaussians(n: usize, separation: f64, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    ensure!(n >= 2, InvalidArgument, "need n >= 2");
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let label = s % 2;
        let cx = if label == 0 { -0.5 * separation } else { 0.5 * separation };
        data.push(cx + standard_normal(&mut rng));
        data.push(standard_normal(&mut rng));
        labels.push(label);
    }
    Ok((Tensor::new(vec![n, 2], data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_deterministic() {
        let a = gen_gaussian_dataset(8, 1000, 7).unwrap();
        let b = gen_gaussian_dataset(8, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_gaussian_dataset(8, 1000, 8).unwrap());
    }

    #[test]
    fn stripes_have_expected_structure() {
        let spec = StripeSpec {
            noise: 0.0,
            amplitude: (1.0, 1.0),
            ..Default::default()
        };
        let (x, y) = gen_striped_images(2, &spec, 1).unwrap();
        assert_eq!(x.shape(), &[2, 16, 16, 1]);
        assert_eq!(y, vec![0, 1]);
        assert_eq!(x.get(&[0, 0, 5, 0]), 1.0);
        assert_eq!(x.get(&[0, 2, 5, 0]), -1.0);
        assert_eq!(x.get(&[1, 5, 2, 0]), -1.0);
        assert!(x.max_abs() <= 1.0);
    }
}
