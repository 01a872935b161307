//! Noise predictors `eps_theta(x_t, t)`.

use super::schedule::Schedule;
use crate::error::{ensure, LoridError, Result};
use crate::linalg::psd_eigen;
use crate::tensor::{Matrix, Tensor};

/// Predicts the standard Gaussian noise that produced `x_t` at step `t`.
pub trait Denoiser: Sync {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        (**self).predict_eps(x_t, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        (**self).predict_eps(x_t, t)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_eps(&self, x_t: &Tensor, _t: usize) -> Result<Tensor> {
        Ok(Tensor::zeros(x_t.shape()))
    }
}

/// Knows the clean signal and returns the exact noise consistent with `x_t`:
/// `(x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t)`. A perfect `eps_theta` for tests
/// and reference runs.
#[derive(Debug, Clone)]
pub struct KnownSignalDenoiser {
    x0: Tensor,
    schedule: Schedule,
}

impl KnownSignalDenoiser {
    pub fn new(x0: Tensor, schedule: Schedule) -> Self {
        Self { x0, schedule }
    }
}

impl Denoiser for KnownSignalDenoiser {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.schedule.check_step(t)?;
        let ab = self.schedule.alpha_bar(t);
        let inv = 1.0 / (1.0 - ab).sqrt();
        x_t.axpby(inv, &self.x0, -ab.sqrt() * inv)
    }
}

/// Closed-form posterior noise estimate for Gaussian data `N(mu, Sigma)`:
/// `E[eps | x_t] = sqrt(1 - ab) (ab Sigma + (1 - ab) I)^{-1} (x_t - sqrt(ab) mu)`.
#[derive(Debug, Clone)]
pub struct GaussianOracleDenoiser {
    shape: Vec<usize>,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    // None means the covariance is diagonal in the standard basis.
    eigenvectors: Option<Matrix>,
    schedule: Schedule,
}

impl GaussianOracleDenoiser {
    /// `N(mean, diag(variances))` on samples of the given shape.
    pub fn diagonal(
        shape: &[usize],
        mean: Vec<f64>,
        variances: Vec<f64>,
        schedule: Schedule,
    ) -> Result<Self> {
        let d: usize = shape.iter().product();
        ensure!(
            mean.len() == d && variances.len() == d,
            Shape,
            "mean/variance length must equal sample size {d}"
        );
        ensure!(
            variances.iter().all(|v| *v >= 0.0 && v.is_finite()),
            InvalidArgument,
            "variances must be finite and nonnegative"
        );
        Ok(Self {
            shape: shape.to_vec(),
            mean,
            eigenvalues: variances,
            eigenvectors: None,
            schedule,
        })
    }

    /// Standard normal data of the given shape.
    pub fn standard(shape: &[usize], schedule: Schedule) -> Self {
        let d: usize = shape.iter().product();
        Self::diagonal(shape, vec![0.0; d], vec![1.0; d], schedule).expect("valid")
    }

    /// `N(mean, cov)` with a full symmetric PSD covariance.
    pub fn with_covariance(
        shape: &[usize],
        mean: Vec<f64>,
        cov: &Matrix,
        schedule: Schedule,
    ) -> Result<Self> {
        let d: usize = shape.iter().product();
        ensure!(
            mean.len() == d && cov.rows() == d && cov.cols() == d,
            Shape,
            "mean/covariance must match sample size {d}"
        );
        let (eigenvalues, vecs) = psd_eigen(cov)?;
        Ok(Self {
            shape: shape.to_vec(),
            mean,
            eigenvalues: eigenvalues.into_iter().map(|v| v.max(0.0)).collect(),
            eigenvectors: Some(vecs),
            schedule,
        })
    }

    /// Moment-matched Gaussian of a dataset `(N, ...)` with `ridge` added
    /// to the covariance diagonal.
    pub fn fit(dataset: &Tensor, ridge: f64, schedule: Schedule) -> Result<Self> {
        ensure!(dataset.order() >= 2, Shape, "dataset needs a leading sample mode");
        let n = dataset.shape()[0];
        ensure!(n >= 2, InvalidArgument, "need at least two samples to fit a covariance");
        let (mean, cov) = sample_moments(dataset, ridge);
        Self::with_covariance(&dataset.shape()[1..], mean, &cov, schedule)
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dense covariance matrix.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        match &self.eigenvectors {
            None => Matrix::from_diag(&self.eigenvalues),
            Some(q) => Matrix::from_fn(d, d, |r, c| {
                (0..d).map(|k| q.get(r, k) * self.eigenvalues[k] * q.get(c, k)).sum()
            }),
        }
    }

    /// Symmetric square root of the covariance, used to sample the prior.
    pub fn covariance_sqrt(&self) -> Matrix {
        let d = self.dim();
        let roots: Vec<f64> = self.eigenvalues.iter().map(|v| v.sqrt()).collect();
        match &self.eigenvectors {
            None => Matrix::from_diag(&roots),
            Some(q) => Matrix::from_fn(d, d, |r, c| {
                (0..d).map(|k| q.get(r, k) * roots[k] * q.get(c, k)).sum()
            }),
        }
    }

    // Rotate into the eigenbasis, scale each coordinate, rotate back.
    fn apply_spectral(&self, v: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        match &self.eigenvectors {
            None => v
                .iter()
                .zip(&self.eigenvalues)
                .map(|(x, &l)| x * f(l))
                .collect(),
            Some(q) => {
                let d = v.len();
                let mut coords = vec![0.0; d];
                for r in 0..d {
                    let row = q.row(r);
                    let vr = v[r];
                    for (c, qv) in coords.iter_mut().zip(row) {
                        *c += qv * vr;
                    }
                }
                for (c, &l) in coords.iter_mut().zip(&self.eigenvalues) {
                    *c *= f(l);
                }
                (0..d)
                    .map(|r| q.row(r).iter().zip(&coords).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }

    /// Analytic per-dimension MMSE of estimating `x0` from `x_t`:
    /// `(1/d) sum_k lambda_k / (1 + snr_t lambda_k)`.
    pub fn mmse_per_dim(&self, t: usize) -> f64 {
        let snr = self.schedule.snr(t);
        self.eigenvalues.iter().map(|l| l / (1.0 + snr * l)).sum::<f64>() / self.dim() as f64
    }
}

impl Denoiser for GaussianOracleDenoiser {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.schedule.check_step(t)?;
        ensure!(
            x_t.shape() == self.shape.as_slice(),
            Shape,
            "oracle expects samples of shape {:?}, got {:?}",
            self.shape,
            x_t.shape()
        );
        let ab = self.schedule.alpha_bar(t);
        if ab >= 1.0 {
            return Err(LoridError::InvalidArgument(
                "alpha_bar = 1 makes the noise unidentifiable".into(),
            ));
        }
        let sab = ab.sqrt();
        let centered: Vec<f64> = x_t
            .data()
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| x - sab * m)
            .collect();
        let s1 = (1.0 - ab).sqrt();
        let out = self.apply_spectral(&centered, |l| s1 / (ab * l + 1.0 - ab));
        Tensor::new(self.shape.clone(), out)
    }
}

/// Sample mean and covariance (with `ridge` on the diagonal) of `(N, ...)`.
pub fn sample_moments(dataset: &Tensor, ridge: f64) -> (Vec<f64>, Matrix) {
    let n = dataset.shape()[0];
    let d = dataset.len() / n;
    let data = dataset.data();
    let mut mean = vec![0.0; d];
    for s in 0..n {
        for (m, v) in mean.iter_mut().zip(&data[s * d..(s + 1) * d]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(data[s * d..(s + 1) * d].iter().zip(&mean)) {
            *c = v - m;
        }
        let cd = cov.data_mut();
        for r in 0..d {
            let cr = centered[r];
            if cr == 0.0 {
                continue;
            }
            for (o, cc) in cd[r * d..(r + 1) * d].iter_mut().zip(&centered) {
                *o += cr * cc;
            }
        }
    }
    let denom = (n - 1).max(1) as f64;
    for r in 0..d {
        for c in 0..d {
            let v = cov.get(r, c) / denom + if r == c { ridge } else { 0.0 };
            cov.set(r, c, v);
        }
    }
    (mean, cov)
}
