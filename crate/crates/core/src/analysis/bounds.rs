//! Monte Carlo checks of the purification error bounds against the analytic
//! Gaussian MMSE.
//!
//! Errors are mean squared error per dimension. Perturbation sizes enter
//! the bounds as root-mean-square entries, so every term lives on the same
//! per-dimension scale.

use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{diffuse, one_shot_recover, Denoiser, GaussianOracleDenoiser, Schedule};
use crate::error::{ensure, Result};
use crate::purify::{lorid_purify, LoridConfig};
use crate::rng::{derived, gaussian_vec};
use crate::tensor::{Matrix, Tensor};
use crate::tucker::{tf_apply, TuckerBasis};

/// Trials handled by one random stream.
pub const TRIAL_CHUNK: usize = 256;
/// Width of the Monte Carlo tolerance band, in standard errors.
pub const TOLERANCE_SIGMAS: f64 = 4.0;

/// Data law, estimator, and what is done to the input before purification.
#[derive(Clone, Copy)]
pub struct BoundSetup<'a> {
    /// Gaussian data distribution; also fixes the analytic MMSE.
    pub prior: &'a GaussianOracleDenoiser,
    pub denoiser: &'a dyn Denoiser,
    /// Fixed perturbation added to every clean sample.
    pub eps_a: Option<&'a Tensor>,
    /// Tucker projection applied before diffusion.
    pub basis: Option<&'a TuckerBasis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub t: usize,
    pub trials: usize,
    /// Analytic per-dimension MMSE at step `t`.
    pub mmse: f64,
    /// `max(0, clean recovery error - mmse)`.
    pub delta_ddpm_est: f64,
    /// Clean one-shot recovery error.
    pub clean_empirical: f64,
    pub eps_a_rms: f64,
    /// Mean of `||x - TF(x)|| / sqrt(d)` over trials (0 without a basis).
    pub e_tucker_rms: f64,
    /// `||TF(eps_a)|| / sqrt(d)` (equals `eps_a_rms` without a basis).
    pub tf_eps_rms: f64,
    pub lower: f64,
    pub upper: f64,
    /// Error of the perturbed (and projected) purification path.
    pub empirical: f64,
    /// Mean of `||x_hat - x_clean|| / sqrt(d)`.
    pub empirical_norm: f64,
    pub std_error: f64,
    pub tolerance: f64,
}

impl BoundReport {
    pub fn lower_margin(&self) -> f64 {
        self.empirical - self.lower + self.tolerance
    }

    pub fn upper_margin(&self) -> f64 {
        self.upper + self.tolerance - self.empirical
    }

    pub fn holds(&self) -> bool {
        self.lower_margin() >= 0.0 && self.upper_margin() >= 0.0
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    clean: f64,
    clean_sq: f64,
    adv: f64,
    adv_sq: f64,
    adv_norm: f64,
    e_tucker: f64,
}

impl Sums {
    fn merge(mut self, o: Sums) -> Sums {
        self.clean += o.clean;
        self.clean_sq += o.clean_sq;
        self.adv += o.adv;
        self.adv_sq += o.adv_sq;
        self.adv_norm += o.adv_norm;
        self.e_tucker += o.e_tucker;
        self
    }
}

/// Draw one sample from the prior.
pub fn sample_prior<R: Rng + ?Sized>(prior: &GaussianOracleDenoiser, root: &Matrix, rng: &mut R) -> Result<Tensor> {
    let z = gaussian_vec(prior.dim(), rng);
    let mut x = root.matvec(&z)?;
    x.iter_mut().zip(prior.mean()).for_each(|(v, m)| *v += m);
    Tensor::new(prior.sample_shape().to_vec(), x)
}

fn chunks(trials: usize) -> Vec<(u64, usize)> {
    (0..trials.div_ceil(TRIAL_CHUNK))
        .map(|k| (k as u64, TRIAL_CHUNK.min(trials - k * TRIAL_CHUNK)))
        .collect()
}

/// Estimate the clean and perturbed one-shot recovery errors at step `t`
/// and compare them with `[mmse - perturbation, mmse + delta + perturbation]`.
pub fn verify_bounds(setup: &BoundSetup, schedule: &Schedule, t: usize, trials: usize, seed: u64) -> Result<BoundReport> {
    schedule.check_step(t)?;
    ensure!(trials >= 2, InvalidArgument, "need at least two trials");
    let prior = setup.prior;
    let shape = prior.sample_shape().to_vec();
    let d = prior.dim() as f64;
    if let Some(e) = setup.eps_a {
        ensure!(e.shape() == shape.as_slice(), Shape, "eps_a shape {:?} vs samples {shape:?}", e.shape());
    }
    let root = prior.covariance_sqrt();
    let eps_a_rms = setup.eps_a.map_or(0.0, |e| e.frobenius_norm() / d.sqrt());
    let tf_eps_rms = match (setup.eps_a, setup.basis) {
        (Some(e), Some(b)) => tf_apply(e, b)?.frobenius_norm() / d.sqrt(),
        _ => eps_a_rms,
    };

    let sums = chunks(trials)
        .into_par_iter()
        .map(|(k, n)| -> Result<Sums> {
            let mut rng = derived(seed, k);
            let mut s = Sums::default();
            for _ in 0..n {
                let x = sample_prior(prior, &root, &mut rng)?;
                let (xt, _) = diffuse(&x, t, schedule, &mut rng)?;
                let rec = one_shot_recover(&xt, t, setup.denoiser, schedule)?;
                let c = rec.sub(&x)?.squared_norm() / d;
                s.clean += c;
                s.clean_sq += c * c;

                let mut input = match setup.eps_a {
                    Some(e) => x.add(e)?,
                    None => x.clone(),
                };
                if let Some(b) = setup.basis {
                    s.e_tucker += x.sub(&tf_apply(&x, b)?)?.frobenius_norm() / d.sqrt();
                    input = tf_apply(&input, b)?;
                }
                let (xt, _) = diffuse(&input, t, schedule, &mut rng)?;
                let rec = one_shot_recover(&xt, t, setup.denoiser, schedule)?;
                let a = rec.sub(&x)?.squared_norm() / d;
                s.adv += a;
                s.adv_sq += a * a;
                s.adv_norm += a.sqrt();
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(Sums::default(), Sums::merge);

    let n = trials as f64;
    let mmse = prior.mmse_per_dim(t);
    let clean_empirical = sums.clean / n;
    let empirical = sums.adv / n;
    let var = (sums.adv_sq / n - empirical * empirical).max(0.0) * n / (n - 1.0);
    let std_error = (var / n).sqrt();
    let delta_ddpm_est = (clean_empirical - mmse).max(0.0);
    let e_tucker_rms = sums.e_tucker / n;
    let perturbation = if setup.basis.is_some() {
        e_tucker_rms + tf_eps_rms
    } else {
        eps_a_rms
    };
    Ok(BoundReport {
        t,
        trials,
        mmse,
        delta_ddpm_est,
        clean_empirical,
        eps_a_rms,
        e_tucker_rms,
        tf_eps_rms,
        lower: mmse - perturbation,
        upper: mmse + delta_ddpm_est + perturbation,
        empirical,
        empirical_norm: sums.adv_norm / n,
        std_error,
        tolerance: TOLERANCE_SIGMAS * std_error,
    })
}

/// Mean and standard error of the per-dimension squared purification error
/// of `lorid_purify` on clean prior samples.
pub fn purification_mse(
    prior: &GaussianOracleDenoiser,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    cfg: &LoridConfig,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    cfg.validate(schedule)?;
    ensure!(trials >= 2, InvalidArgument, "need at least two trials");
    let root = prior.covariance_sqrt();
    let d = prior.dim() as f64;
    let (sum, sum_sq) = chunks(trials)
        .into_par_iter()
        .map(|(k, n)| -> Result<(f64, f64)> {
            let mut rng = derived(seed, k);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = sample_prior(prior, &root, &mut rng)?;
                let (y, _) = lorid_purify(&x, cfg, denoiser, schedule, &mut rng)?;
                let e = y.sub(&x)?.squared_norm() / d;
                s += e;
                s2 += e * e;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_clean_recovery_hits_mmse() {
        let sched = Schedule::default();
        let prior = GaussianOracleDenoiser::standard(&[4], sched.clone());
        let setup = BoundSetup {
            prior: &prior,
            denoiser: &prior,
            eps_a: None,
            basis: None,
        };
        let r = verify_bounds(&setup, &sched, 300, 4000, 1).unwrap();
        assert!((r.clean_empirical / r.mmse - 1.0).abs() < 0.05);
        assert!((r.mmse - (1.0 - sched.alpha_bar(300))).abs() < 1e-12);
        assert!(r.holds());
    }

    #[test]
    fn deterministic_in_seed() {
        let sched = Schedule::default();
        let prior = GaussianOracleDenoiser::standard(&[2], sched.clone());
        let eps = Tensor::vector(vec![0.1, -0.1]);
        let setup = BoundSetup {
            prior: &prior,
            denoiser: &prior,
            eps_a: Some(&eps),
            basis: None,
        };
        let a = verify_bounds(&setup, &sched, 50, 600, 3).unwrap();
        let b = verify_bounds(&setup, &sched, 50, 600, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.eps_a_rms - 0.1).abs() < 1e-15);
    }
}
