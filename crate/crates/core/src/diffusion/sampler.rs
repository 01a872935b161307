//! Forward diffusion `f_t` and the reverse maps `r_t`.

use rand::Rng;

use super::denoiser::Denoiser;
use super::schedule::Schedule;
use crate::error::{ensure, Result};
use crate::rng::gaussian_tensor;
use crate::tensor::Tensor;

/// Reverse process used by purification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Stochastic DDPM ancestral sampling, one step at a time.
    #[default]
    Ancestral,
    /// Deterministic sampler jumping `k` steps per denoiser call.
    Skip(usize),
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps0`; returns `(x_t, eps0)`.
pub fn diffuse<R: Rng + ?Sized>(
    x0: &Tensor,
    t: usize,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    schedule.check_step(t)?;
    let eps = gaussian_tensor(x0.shape(), rng);
    let ab = schedule.alpha_bar(t);
    let xt = x0.axpby(ab.sqrt(), &eps, (1.0 - ab).sqrt())?;
    Ok((xt, eps))
}

/// `x~0(t) = x_t / sqrt(ab_t) - sqrt(1 - ab_t) / sqrt(ab_t) * eps_theta(x_t, t)`.
pub fn one_shot_recover(
    x_t: &Tensor,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    let eps = denoiser.predict_eps(x_t, t)?;
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    x_t.axpby(inv, &eps, -(1.0 - ab).sqrt() * inv)
}

/// One ancestral step from `s` to `s - 1`. No noise is injected at `s = 1`.
pub fn ancestral_step<R: Rng + ?Sized>(
    x_s: &Tensor,
    s: usize,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Tensor> {
    let eps = denoiser.predict_eps(x_s, s)?;
    let alpha = schedule.alpha(s);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(s)).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mean = x_s.axpby(inv, &eps, -coef * inv)?;
    if s == 1 {
        return Ok(mean);
    }
    let sigma = schedule.posterior_std(s);
    let z = gaussian_tensor(x_s.shape(), rng);
    mean.axpby(1.0, &z, sigma)
}

/// `r_t`: ancestral sampling from step `t` down to 0.
pub fn reverse_ancestral<R: Rng + ?Sized>(
    x_t: &Tensor,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    let mut x = x_t.clone();
    for s in (1..=t).rev() {
        x = ancestral_step(&x, s, denoiser, schedule, rng)?;
    }
    Ok(x)
}

/// Deterministic skip-step reverse process:
/// `x_{t-k} = sqrt(ab_{t-k}/ab_t) x_t
///   + sqrt(ab_{t-k}) (sqrt((1-ab_{t-k})/ab_{t-k}) - sqrt((1-ab_t)/ab_t)) eps_theta(x_t, t)`,
/// repeated until step 0 (the last jump may be shorter than `k`).
pub fn reverse_skip(
    x_t: &Tensor,
    t: usize,
    k: usize,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    ensure!(k >= 1, InvalidArgument, "skip size must be >= 1");
    let mut x = x_t.clone();
    let mut cur = t;
    while cur > 0 {
        let next = cur.saturating_sub(k);
        let eps = denoiser.predict_eps(&x, cur)?;
        let (ab_cur, ab_next) = (schedule.alpha_bar(cur), schedule.alpha_bar(next));
        let ratio = (ab_next / ab_cur).sqrt();
        let coef = ab_next.sqrt()
            * (((1.0 - ab_next) / ab_next).sqrt() - ((1.0 - ab_cur) / ab_cur).sqrt());
        x = x.axpby(ratio, &eps, coef)?;
        cur = next;
    }
    Ok(x)
}

/// Run the selected reverse process from step `t`.
pub fn reverse<R: Rng + ?Sized>(
    x_t: &Tensor,
    t: usize,
    sampler: Sampler,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Tensor> {
    match sampler {
        Sampler::Ancestral => reverse_ancestral(x_t, t, denoiser, schedule, rng),
        Sampler::Skip(k) => reverse_skip(x_t, t, k, denoiser, schedule),
    }
}
