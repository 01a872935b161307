//! LoRID purification: optional Tucker projection followed by `L` short
//! diffuse/denoise loops at `t' = floor(t / L)`.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{diffuse, reverse, reverse_ancestral, Denoiser, Sampler, Schedule};
use crate::error::{ensure, Result};
use crate::rng::derived;
use crate::tensor::Tensor;
use crate::tucker::{tf_apply, TuckerBasis};

/// Composition order inside one loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopOrder {
    /// `x <- r_{t'}(f_{t'}(x))`.
    #[default]
    DiffuseThenDenoise,
    /// `x <- f_{t'}(r_{t'}(x))`, the order printed in the algorithm box.
    DenoiseThenDiffuse,
}

#[derive(Debug, Clone)]
pub struct LoridConfig {
    /// Total purified time step.
    pub t: usize,
    /// Number of loops `L`.
    pub loops: usize,
    pub use_tucker: bool,
    pub basis: Option<TuckerBasis>,
    pub sampler: Sampler,
    pub order: LoopOrder,
    /// Clamp range applied once to the final output.
    pub clamp: Option<(f64, f64)>,
    /// Base seed for batch purification; sample `i` uses stream `i`.
    pub seed: u64,
}

impl LoridConfig {
    /// Loop-only purification with `L` loops and no Tucker step.
    pub fn new(t: usize, loops: usize) -> Self {
        Self {
            t,
            loops,
            use_tucker: false,
            basis: None,
            sampler: Sampler::Ancestral,
            order: LoopOrder::default(),
            clamp: None,
            seed: 0,
        }
    }

    pub fn with_basis(mut self, basis: TuckerBasis) -> Self {
        self.use_tucker = true;
        self.basis = Some(basis);
        self
    }

    /// Per-loop time step `floor(t / L)`.
    pub fn step_per_loop(&self) -> usize {
        self.t / self.loops.max(1)
    }

    pub fn validate(&self, schedule: &Schedule) -> Result<()> {
        ensure!(
            self.t >= 1 && self.t <= schedule.steps(),
            Config,
            "t = {} outside 1..={}",
            self.t,
            schedule.steps()
        );
        ensure!(self.loops >= 1, Config, "L must be >= 1");
        ensure!(
            self.loops <= self.t,
            Config,
            "L = {} exceeds t = {}, leaving t' = 0",
            self.loops,
            self.t
        );
        ensure!(
            !self.use_tucker || self.basis.is_some(),
            Config,
            "use_tucker requires a fitted basis"
        );
        if let Sampler::Skip(k) = self.sampler {
            ensure!(k >= 1, Config, "skip size must be >= 1");
        }
        if let Some((lo, hi)) = self.clamp {
            ensure!(lo < hi, Config, "clamp range {lo}..{hi} is empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PurifyTrace {
    /// State after each loop.
    pub loops: Vec<Tensor>,
    /// Distance to the reference after each loop, when one was given.
    pub distances: Option<Vec<f64>>,
    pub elapsed: Duration,
}

/// `r_t(f_t(x))` with ancestral sampling.
pub fn purify_single<R: Rng + ?Sized>(
    x: &Tensor,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Tensor> {
    let (xt, _) = diffuse(x, t, schedule, rng)?;
    reverse_ancestral(&xt, t, denoiser, schedule, rng)
}

pub fn lorid_purify<R: Rng + ?Sized>(
    x: &Tensor,
    cfg: &LoridConfig,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<(Tensor, PurifyTrace)> {
    lorid_purify_traced(x, cfg, denoiser, schedule, None, rng)
}

/// Like [`lorid_purify`], also recording the distance of every loop output
/// to `reference`.
pub fn lorid_purify_traced<R: Rng + ?Sized>(
    x: &Tensor,
    cfg: &LoridConfig,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    reference: Option<&Tensor>,
    rng: &mut R,
) -> Result<(Tensor, PurifyTrace)> {
    cfg.validate(schedule)?;
    if let Some(r) = reference {
        x.expect_same_shape(r)?;
    }
    let start = Instant::now();
    let step = cfg.step_per_loop();
    let mut cur = match (&cfg.basis, cfg.use_tucker) {
        (Some(basis), true) => tf_apply(x, basis)?,
        _ => x.clone(),
    };
    let mut trace = PurifyTrace {
        loops: Vec::with_capacity(cfg.loops),
        distances: reference.map(|_| Vec::with_capacity(cfg.loops)),
        elapsed: Duration::ZERO,
    };
    for _ in 0..cfg.loops {
        cur = match cfg.order {
            LoopOrder::DiffuseThenDenoise => {
                let (xt, _) = diffuse(&cur, step, schedule, rng)?;
                reverse(&xt, step, cfg.sampler, denoiser, schedule, rng)?
            }
            LoopOrder::DenoiseThenDiffuse => {
                let x0 = reverse(&cur, step, cfg.sampler, denoiser, schedule, rng)?;
                diffuse(&x0, step, schedule, rng)?.0
            }
        };
        if let (Some(r), Some(d)) = (reference, trace.distances.as_mut()) {
            d.push(cur.sub(r)?.frobenius_norm());
        }
        trace.loops.push(cur.clone());
    }
    if let Some((lo, hi)) = cfg.clamp {
        cur = cur.clamp(lo, hi);
    }
    trace.elapsed = start.elapsed();
    Ok((cur, trace))
}

/// Purify every sample of a batch `(N, ...)` in parallel. Sample `i` draws
/// from stream `i` of `cfg.seed`, so the result does not depend on the
/// thread count.
pub fn purify_batch(
    batch: &Tensor,
    cfg: &LoridConfig,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
) -> Result<Tensor> {
    cfg.validate(schedule)?;
    let samples = batch.unstack()?;
    let out = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = derived(cfg.seed, i as u64);
            lorid_purify(x, cfg, denoiser, schedule, &mut rng).map(|(y, _)| y)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&out)
}

/// `x_clean + eps_a`.
pub fn add_adversarial(x_clean: &Tensor, eps_a: &Tensor) -> Result<Tensor> {
    x_clean.add(eps_a)
}

/// A perturbation together with its norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Tensor,
    pub linf: f64,
    pub l2: f64,
}

impl Perturbation {
    pub fn new(delta: Tensor) -> Self {
        let linf = delta.max_abs();
        let l2 = delta.frobenius_norm();
        Self { delta, linf, l2 }
    }

    /// Root-mean-square entry, the per-dimension scale of the perturbation.
    pub fn rms(&self) -> f64 {
        self.l2 / (self.delta.len() as f64).sqrt()
    }
}

/// Entries `+-budget` with independent fair signs.
pub fn uniform_sign_noise<R: Rng + ?Sized>(shape: &[usize], budget: f64, rng: &mut R) -> Result<Perturbation> {
    ensure!(budget >= 0.0 && budget.is_finite(), InvalidArgument, "budget must be finite and >= 0");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = if rng.random::<bool>() { budget } else { -budget };
    }
    Ok(Perturbation::new(t))
}

/// Gaussian direction rescaled to Euclidean norm `norm`.
pub fn gaussian_noise_l2<R: Rng + ?Sized>(shape: &[usize], norm: f64, rng: &mut R) -> Result<Perturbation> {
    ensure!(norm >= 0.0 && norm.is_finite(), InvalidArgument, "norm must be finite and >= 0");
    let z = crate::rng::gaussian_tensor(shape, rng);
    let n = z.frobenius_norm();
    ensure!(n > 0.0, NonFinite, "degenerate gaussian draw");
    Ok(Perturbation::new(z.scale(norm / n)))
}
