//! Self-contained numerical checks, one per theorem, shared by the CLI
//! `verify` command and the acceptance tests.

use std::fmt::Write as _;

use rand::Rng;

use super::bounds::{purification_mse, verify_bounds, BoundReport, BoundSetup};
use super::curves::{first_non_decrease, loop_bound_curve};
use super::kl::{kl_gaussian_forward, kl_quadrature_forward, max_increase, GaussianParams, Grid1d};
use crate::data::{gen_striped_images, StripeSpec};
use crate::diffusion::{GaussianOracleDenoiser, Schedule};
use crate::error::Result;
use crate::io::CsvTable;
use crate::purify::LoridConfig;
use crate::rng::{derived, seeded, standard_normal};
use crate::tensor::{Matrix, Tensor};
use crate::tucker::{fit_basis, RankPolicy, TensorizationLayout};

/// Result of one check: verdict, human-readable lines and a CSV table.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub lines: Vec<String>,
    pub table: CsvTable,
}

impl CheckOutcome {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            lines: Vec::new(),
            table: CsvTable::new(header),
        }
    }

    fn fail(&mut self, line: String) {
        self.passed = false;
        self.lines.push(format!("FAIL {line}"));
    }

    pub fn report(&self) -> String {
        let mut s = format!("{}: {}\n", self.name, if self.passed { "pass" } else { "FAIL" });
        for l in &self.lines {
            let _ = writeln!(s, "  {l}");
        }
        s
    }
}

/// Steps used by the Monte Carlo bound checks.
pub const BOUND_STEPS: [usize; 4] = [50, 200, 500, 800];
pub const CLOSED_FORM_KL_TOL: f64 = 1e-12;
pub const QUADRATURE_KL_TOL: f64 = 1e-6;

fn random_gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<GaussianParams> {
    let mut a = Matrix::zeros(d, d);
    for v in a.data_mut() {
        *v = standard_normal(rng);
    }
    let mut cov = a.matmul(&a.transpose())?;
    for i in 0..d {
        cov.set(i, i, cov.get(i, i) + 0.1);
    }
    let mean = (0..d).map(|_| 2.0 * standard_normal(rng)).collect();
    GaussianParams::new(mean, cov)
}

fn normal_pdf(m: f64, s: f64) -> impl Fn(f64) -> f64 {
    move |x| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / s
}

/// Named 1-D density pairs with full support of the second density.
pub fn quadrature_pairs() -> Vec<(&'static str, Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>)> {
    let mix = |x: f64| 0.5 * normal_pdf(-2.0, 0.5)(x) + 0.5 * normal_pdf(2.0, 0.5)(x);
    vec![
        ("bimodal_vs_normal", Box::new(mix), Box::new(normal_pdf(0.0, 1.0))),
        ("laplace_vs_normal", Box::new(|x: f64| (-x.abs()).exp()), Box::new(normal_pdf(0.0, 1.0))),
        (
            "uniform_vs_wide_normal",
            Box::new(|x: f64| if x.abs() <= 2.0 { 1.0 } else { 0.0 }),
            Box::new(normal_pdf(0.0, 2.0)),
        ),
        (
            "normal_vs_laplace",
            Box::new(normal_pdf(1.0, 0.5)),
            Box::new(|x: f64| (-x.abs() / 1.5).exp()),
        ),
        (
            "skewed_mixture_vs_normal",
            Box::new(|x: f64| 0.7 * normal_pdf(-1.0, 0.3)(x) + 0.3 * normal_pdf(2.0, 1.0)(x)),
            Box::new(normal_pdf(0.0, 1.5)),
        ),
    ]
}

/// KL contraction: closed form over every `t = 0..=T` for random Gaussian
/// pairs, quadrature over `t = 0, 50, ..` for non-Gaussian 1-D pairs.
/// With `identical`, each pair compares a distribution with itself.
pub fn check_kl_monotone(schedule: &Schedule, pairs: usize, dim: usize, identical: bool, seed: u64) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("kl_contraction", &["pair", "t", "kl"]);
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let a = random_gaussian(dim, &mut rng)?;
        let b = if identical { a.clone() } else { random_gaussian(dim, &mut rng)? };
        let seq = (0..=schedule.steps())
            .map(|t| kl_gaussian_forward(&a, &b, schedule, t))
            .collect::<Result<Vec<_>>>()?;
        let inc = max_increase(&seq);
        worst = worst.max(inc);
        if inc > CLOSED_FORM_KL_TOL {
            out.fail(format!("gaussian pair {p}: KL increases by {inc:e}"));
        }
        if identical && seq.iter().any(|v| v.abs() > CLOSED_FORM_KL_TOL) {
            out.fail(format!("gaussian pair {p}: identical inputs give nonzero KL"));
        }
        for (t, v) in seq.iter().enumerate().step_by(50) {
            out.table.push(&[format!("gaussian_{p}"), t.to_string(), v.to_string()]);
        }
    }
    out.lines.push(format!("{pairs} gaussian pairs, worst increase {worst:e} (tol {CLOSED_FORM_KL_TOL:e})"));

    let grid = Grid1d::new(-8.0, 8.0, 801)?;
    let ts: Vec<usize> = (0..=schedule.steps()).step_by(50).collect();
    for (name, f1, f2) in quadrature_pairs() {
        let p1 = grid.density(f1)?;
        let p2 = if identical { p1.clone() } else { grid.density(f2)? };
        let seq = ts
            .iter()
            .map(|&t| kl_quadrature_forward(&grid, &p1, &p2, schedule, t))
            .collect::<Result<Vec<_>>>()?;
        let inc = max_increase(&seq);
        if inc > QUADRATURE_KL_TOL {
            out.fail(format!("{name}: KL increases by {inc:e}"));
        }
        out.lines.push(format!(
            "{name}: KL {:.6} -> {:.3e}, worst increase {inc:e} (tol {QUADRATURE_KL_TOL:e})",
            seq[0],
            seq[seq.len() - 1]
        ));
        for (t, v) in ts.iter().zip(&seq) {
            out.table.push(&[name.to_string(), t.to_string(), v.to_string()]);
        }
    }
    Ok(out)
}

const BOUND_HEADER: [&str; 9] = [
    "t",
    "eps_rms",
    "mmse",
    "lower",
    "empirical",
    "upper",
    "delta_est",
    "tolerance",
    "clean_empirical",
];

fn bound_row(out: &mut CheckOutcome, r: &BoundReport) {
    out.table.push(&[
        r.t as f64,
        r.eps_a_rms,
        r.mmse,
        r.lower,
        r.empirical,
        r.upper,
        r.delta_ddpm_est,
        r.tolerance,
        r.clean_empirical,
    ]);
}

/// Alternating-sign perturbation with every entry of magnitude `rms`.
pub fn sign_pattern(shape: &[usize], rms: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = if i % 2 == 0 { rms } else { -rms };
    }
    t
}

/// Clean one-shot recovery with the oracle on `N(0, I_d)`: the error must
/// equal `1 / (1 + snr)` within `rel_tol`, lie in `[mmse, mmse + delta]`
/// up to Monte Carlo tolerance, and `delta` must stay below 1% of `mmse`.
pub fn check_clean_recovery(schedule: &Schedule, dim: usize, trials: usize, rel_tol: f64, seed: u64) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("clean_recovery", &BOUND_HEADER);
    let prior = GaussianOracleDenoiser::standard(&[dim], schedule.clone());
    let setup = BoundSetup {
        prior: &prior,
        denoiser: &prior,
        eps_a: None,
        basis: None,
    };
    for (k, &t) in BOUND_STEPS.iter().enumerate() {
        let r = verify_bounds(&setup, schedule, t, trials, derived(seed, k as u64).random())?;
        let analytic = super::mmse::mmse_gaussian(schedule.snr(t))?;
        let rel = (r.clean_empirical / analytic - 1.0).abs();
        let line = format!(
            "t={t}: empirical {:.6} vs 1/(1+snr) {:.6} (rel {:.4}), delta {:.2e} ({:.3}% of mmse)",
            r.clean_empirical,
            analytic,
            rel,
            r.delta_ddpm_est,
            100.0 * r.delta_ddpm_est / r.mmse
        );
        if rel > rel_tol {
            out.fail(format!("{line}: relative error above {rel_tol}"));
        } else if r.delta_ddpm_est >= 0.01 * r.mmse {
            out.fail(format!("{line}: delta not below 1% of mmse"));
        } else if !r.holds() {
            out.fail(format!("{line}: outside [mmse, mmse + delta] beyond tolerance {:.2e}", r.tolerance));
        } else {
            out.lines.push(line);
        }
        bound_row(&mut out, &r);
    }
    Ok(out)
}

/// Perturbed one-shot recovery on `N(0, I_d)`: the error must respect the
/// lower bound `mmse - ||eps_a||` and, with `upper`, the upper bound
/// `mmse + delta + ||eps_a||`.
pub fn check_adversarial_bounds(
    schedule: &Schedule,
    dim: usize,
    eps_levels: &[f64],
    trials: usize,
    upper: bool,
    seed: u64,
) -> Result<CheckOutcome> {
    let name = if upper { "adversarial_sandwich" } else { "adversarial_lower" };
    let mut out = CheckOutcome::new(name, &BOUND_HEADER);
    let prior = GaussianOracleDenoiser::standard(&[dim], schedule.clone());
    let mut stream = 0u64;
    for &eps in eps_levels {
        let e = sign_pattern(&[dim], eps);
        let setup = BoundSetup {
            prior: &prior,
            denoiser: &prior,
            eps_a: Some(&e),
            basis: None,
        };
        for &t in &BOUND_STEPS {
            stream += 1;
            let r = verify_bounds(&setup, schedule, t, trials, derived(seed, stream).random())?;
            let line = format!(
                "eps={eps} t={t}: lower {:.5} <= empirical {:.5} <= upper {:.5} (tol {:.1e})",
                r.lower, r.empirical, r.upper, r.tolerance
            );
            let ok_lower = r.lower_margin() >= 0.0;
            let ok_upper = !upper || r.upper_margin() >= 0.0;
            if ok_lower && ok_upper {
                out.lines.push(line);
            } else {
                out.fail(line);
            }
            bound_row(&mut out, &r);
        }
    }
    Ok(out)
}

/// `L * mmse(snr(floor(t / L)))` strictly decreasing in `L = 1..=l_max`
/// for each `t` in `effective_ts`.
pub fn check_loop_curve(schedule: &Schedule, effective_ts: &[usize], l_max: usize) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("loop_curve", &["effective_t", "L", "t_over_L", "value"]);
    let loops: Vec<usize> = (1..=l_max).collect();
    for &t in effective_ts {
        let curve = loop_bound_curve(schedule, t, &loops)?;
        for p in &curve {
            out.table.push(&[t as f64, p.loops as f64, p.t_over_l as f64, p.value]);
        }
        let values: Vec<f64> = curve.iter().map(|p| p.value).collect();
        match first_non_decrease(&values) {
            None => out.lines.push(format!(
                "t={t}: {:.6} (L=1) -> {:.6} (L={l_max}), strictly decreasing",
                values[0],
                values[values.len() - 1]
            )),
            Some(i) => out.fail(format!("t={t}: value at L={} does not decrease", i + 1)),
        }
    }
    Ok(out)
}

/// Oracle looped purification on `N(0, I_d)`: `(t, L)` must beat `(t, 1)`
/// by more than the combined Monte Carlo tolerance.
pub fn check_loop_empirical(
    schedule: &Schedule,
    dim: usize,
    t: usize,
    loops: usize,
    trials: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("loop_empirical", &["t", "L", "mse", "std_error"]);
    let prior = GaussianOracleDenoiser::standard(&[dim], schedule.clone());
    let (single, se1) = purification_mse(&prior, &prior, schedule, &LoridConfig::new(t, 1), trials, seed)?;
    let (looped, se2) = purification_mse(&prior, &prior, schedule, &LoridConfig::new(t, loops), trials, seed ^ 1)?;
    out.table.push(&[t as f64, 1.0, single, se1]);
    out.table.push(&[t as f64, loops as f64, looped, se2]);
    let margin = single - looped - 4.0 * (se1 * se1 + se2 * se2).sqrt();
    let line = format!("(t={t}, L={loops}) mse {looped:.5} vs (t={t}, L=1) mse {single:.5}, margin {margin:.5}");
    if margin > 0.0 {
        out.lines.push(line);
    } else {
        out.fail(line);
    }
    Ok(out)
}

/// Tucker-composed purification: a Gaussian moment-matched to 8x8 stripe
/// images, basis fitted on the images, sign perturbation of size `eps`.
/// The measured error must stay below `mmse + delta + e_tucker + ||TF(eps_a)||`.
pub fn check_tucker_composed(schedule: &Schedule, eps: f64, trials: usize, seed: u64) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("tucker_composed", &BOUND_HEADER);
    let spec = StripeSpec {
        height: 8,
        width: 8,
        ..StripeSpec::default()
    };
    let (images, _) = gen_striped_images(400, &spec, seed)?;
    let prior = GaussianOracleDenoiser::fit(&images, 1e-4, schedule.clone())?;
    let layout = TensorizationLayout::new(&[8, 8, 1], 4)?;
    let basis = fit_basis(&images, layout, &RankPolicy::default())?;
    let e = sign_pattern(&[8, 8, 1], eps);
    let setup = BoundSetup {
        prior: &prior,
        denoiser: &prior,
        eps_a: Some(&e),
        basis: Some(&basis),
    };
    out.lines.push(format!("basis ranks {:?}", basis.ranks()));
    for (k, &t) in BOUND_STEPS.iter().enumerate() {
        let r = verify_bounds(&setup, schedule, t, trials, derived(seed, 100 + k as u64).random())?;
        let line = format!(
            "t={t}: empirical {:.5} <= mmse {:.5} + delta {:.2e} + e_tucker {:.5} + ||TF(eps)|| {:.5} = {:.5}",
            r.empirical, r.mmse, r.delta_ddpm_est, r.e_tucker_rms, r.tf_eps_rms, r.upper
        );
        if r.upper_margin() >= 0.0 {
            out.lines.push(line);
        } else {
            out.fail(line);
        }
        bound_row(&mut out, &r);
    }
    Ok(out)
}
