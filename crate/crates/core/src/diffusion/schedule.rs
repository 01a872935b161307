use crate::error::{ensure, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// DDPM variance schedule for steps `t = 1..=T`, with `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    /// Build a schedule from explicit `beta_1..beta_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        ensure!(!betas.is_empty(), InvalidArgument, "schedule needs T >= 1");
        ensure!(
            betas.iter().all(|&b| b > 0.0 && b < 1.0),
            InvalidArgument,
            "every beta must lie in (0, 1)"
        );
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        ensure!(
            *alpha_bars.last().unwrap() > 0.0,
            InvalidArgument,
            "alpha_bar underflows to zero"
        );
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        ensure!(
            t >= 1 && t <= self.steps(),
            OutOfRange,
            "time step {t} outside 1..={}",
            self.steps()
        );
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Effective signal-to-noise ratio `alpha_bar / (1 - alpha_bar)`.
    pub fn snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ab / (1.0 - ab)
    }

    /// Reverse-step standard deviation `sqrt(beta_s (1 - ab_{s-1}) / (1 - ab_s))`.
    pub fn posterior_std(&self, s: usize) -> f64 {
        (self.beta(s) * (1.0 - self.alpha_bar(s - 1)) / (1.0 - self.alpha_bar(s))).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

impl Default for Schedule {
    fn default() -> Self {
        make_linear_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `steps` steps.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    ensure!(steps >= 1, InvalidArgument, "schedule needs T >= 1");
    ensure!(
        beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
        InvalidArgument,
        "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
    );
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (beta_end - beta_start) / (steps - 1) as f64;
        (0..steps).map(|i| beta_start + span * i as f64).collect()
    };
    Schedule::from_betas(betas)
}
