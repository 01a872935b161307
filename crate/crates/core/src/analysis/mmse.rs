//! Gaussian-channel MMSE functions.

use crate::diffusion::Schedule;
use crate::error::{ensure, Result};

/// Simpson nodes on `[-Y_MAX, Y_MAX]` for the binary-input integral.
pub const BINARY_QUAD_NODES: usize = 4801;
pub const BINARY_QUAD_Y_MAX: f64 = 12.0;

fn check_snr(snr: f64) -> Result<()> {
    ensure!(snr >= 0.0 && !snr.is_nan(), InvalidArgument, "snr must be >= 0, got {snr}");
    Ok(())
}

/// `1 / (1 + snr)`: MMSE of a standard Gaussian input.
pub fn mmse_gaussian(snr: f64) -> Result<f64> {
    check_snr(snr)?;
    Ok(1.0 / (1.0 + snr))
}

/// Per-dimension MMSE of a Gaussian input with covariance eigenvalues
/// `lambdas`: `(1/d) sum lambda / (1 + snr lambda)`.
pub fn mmse_gaussian_spectrum(lambdas: &[f64], snr: f64) -> Result<f64> {
    check_snr(snr)?;
    ensure!(!lambdas.is_empty(), InvalidArgument, "empty spectrum");
    ensure!(lambdas.iter().all(|l| *l >= 0.0), InvalidArgument, "negative eigenvalue");
    Ok(lambdas.iter().map(|l| l / (1.0 + snr * l)).sum::<f64>() / lambdas.len() as f64)
}

/// MMSE of a uniform `{-1, +1}` input:
/// `1 - (1/sqrt(2 pi)) int exp(-y^2/2) tanh(snr - sqrt(snr) y) dy`,
/// by composite Simpson on `[-12, 12]`.
pub fn mmse_binary(snr: f64) -> Result<f64> {
    check_snr(snr)?;
    ensure!(snr.is_finite(), InvalidArgument, "snr must be finite");
    if snr == 0.0 {
        return Ok(1.0);
    }
    let n = BINARY_QUAD_NODES - 1;
    let h = 2.0 * BINARY_QUAD_Y_MAX / n as f64;
    let root = snr.sqrt();
    let f = |y: f64| (-0.5 * y * y).exp() * (snr - root * y).tanh();
    let mut acc = f(-BINARY_QUAD_Y_MAX) + f(BINARY_QUAD_Y_MAX);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(-BINARY_QUAD_Y_MAX + h * i as f64);
    }
    let integral = acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    let value = 1.0 - integral;
    ensure!(value.is_finite(), NoConvergence, "binary MMSE quadrature at snr {snr}");
    Ok(value.clamp(0.0, 1.0))
}

/// `alpha_bar_t / (1 - alpha_bar_t)`.
pub fn effective_snr(schedule: &Schedule, t: usize) -> Result<f64> {
    schedule.check_step(t)?;
    Ok(schedule.snr(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_values() {
        assert_eq!(mmse_gaussian(0.0).unwrap(), 1.0);
        assert_eq!(mmse_gaussian(1.0).unwrap(), 0.5);
        assert!((mmse_gaussian(9.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(mmse_gaussian(-1.0).is_err());
        assert!((mmse_gaussian_spectrum(&[1.0; 4], 3.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn binary_endpoints() {
        assert_eq!(mmse_binary(0.0).unwrap(), 1.0);
        assert!(mmse_binary(100.0).unwrap() < 1e-3);
        assert!(mmse_binary(-0.5).is_err());
    }

    #[test]
    fn binary_is_monotone_and_below_gaussian() {
        let mut prev = 1.0;
        for i in 0..=200 {
            let snr = i as f64 * 0.5;
            let b = mmse_binary(snr).unwrap();
            assert!(b <= prev + 1e-12, "snr {snr}");
            assert!(b <= mmse_gaussian(snr).unwrap() + 1e-12, "snr {snr}");
            prev = b;
        }
    }

    #[test]
    fn snr_of_default_schedule() {
        let s = Schedule::default();
        assert!((effective_snr(&s, 1).unwrap() - 9999.0).abs() < 1e-6);
        assert!(effective_snr(&s, 0).is_err());
    }
}
