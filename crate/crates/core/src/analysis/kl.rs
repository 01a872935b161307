//! KL divergence between two data distributions pushed through the forward
//! diffusion, in closed form for Gaussians and by quadrature in 1-D.

use rayon::prelude::*;

use crate::diffusion::Schedule;
use crate::error::{ensure, LoridError, Result};
use crate::linalg::Cholesky;
use crate::tensor::Matrix;

/// Largest tolerated drift of `sum(p) dx` away from 1.
pub const NORMALIZATION_TOL: f64 = 1e-6;

// Kernel contributions beyond this many standard deviations are dropped.
const KERNEL_CUTOFF: f64 = 9.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        ensure!(
            cov.rows() == mean.len() && cov.cols() == mean.len(),
            Shape,
            "covariance {}x{} for mean of length {}",
            cov.rows(),
            cov.cols(),
            mean.len()
        );
        Ok(Self { mean, cov })
    }

    /// Law of `sqrt(ab) x + sqrt(1 - ab) eps` for `x` with these parameters.
    pub fn forward(&self, schedule: &Schedule, t: usize) -> Result<Self> {
        if t > 0 {
            schedule.check_step(t)?;
        }
        let ab = schedule.alpha_bar(t);
        let d = self.mean.len();
        let cov = Matrix::from_fn(d, d, |r, c| {
            ab * self.cov.get(r, c) + if r == c { 1.0 - ab } else { 0.0 }
        });
        Ok(Self {
            mean: self.mean.iter().map(|m| ab.sqrt() * m).collect(),
            cov,
        })
    }
}

/// `KL(N(m0, S0) || N(m1, S1))`.
pub fn kl_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    let d = p.mean.len();
    ensure!(q.mean.len() == d, Shape, "dimension mismatch {d} vs {}", q.mean.len());
    let cp = Cholesky::factor(&p.cov)?;
    let cq = Cholesky::factor(&q.cov)?;
    let mut trace = 0.0;
    for c in 0..d {
        let col = p.cov.column(c);
        trace += cq.solve(&col)[c];
    }
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let maha: f64 = cq.solve(&diff).iter().zip(&diff).map(|(a, b)| a * b).sum();
    Ok(0.5 * (trace + maha - d as f64 + cq.log_det() - cp.log_det()))
}

/// Closed-form `KL(q_t^(1) || q_t^(2))` where `q_t^(i)` is the law of
/// `sqrt(ab_t) x + sqrt(1 - ab_t) eps` for `x ~ p_i`. `t = 0` compares the
/// inputs themselves.
pub fn kl_gaussian_forward(p1: &GaussianParams, p2: &GaussianParams, schedule: &Schedule, t: usize) -> Result<f64> {
    kl_gaussian(&p1.forward(schedule, t)?, &p2.forward(schedule, t)?)
}

/// Uniform 1-D grid with `n` nodes on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        ensure!(n >= 3 && lo < hi, InvalidArgument, "grid needs n >= 3 and lo < hi");
        Ok(Self { lo, hi, n })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + self.dx() * i as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Evaluate `f` on the grid and rescale so that `sum(p) dx = 1`.
    pub fn density(&self, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let mut p: Vec<f64> = self.points().into_iter().map(f).collect();
        ensure!(p.iter().all(|v| *v >= 0.0 && v.is_finite()), InvalidArgument, "density must be finite and >= 0");
        let mass: f64 = p.iter().sum::<f64>() * self.dx();
        ensure!(mass > 0.0, InvalidArgument, "density has zero mass on the grid");
        p.iter_mut().for_each(|v| *v /= mass);
        Ok(p)
    }

    pub fn mass(&self, p: &[f64]) -> f64 {
        p.iter().sum::<f64>() * self.dx()
    }
}

fn check_density(grid: &Grid1d, p: &[f64], name: &str) -> Result<()> {
    ensure!(p.len() == grid.n, Shape, "{name} has {} values for {} nodes", p.len(), grid.n);
    ensure!(p.iter().all(|v| *v >= 0.0 && v.is_finite()), InvalidArgument, "{name} must be finite and >= 0");
    let drift = (grid.mass(p) - 1.0).abs();
    ensure!(drift <= NORMALIZATION_TOL, InvalidArgument, "{name} is not normalized (drift {drift:e})");
    Ok(())
}

/// `sum p log(p / q) dx`, skipping nodes where `p = 0`.
pub fn kl_on_grid(p: &[f64], q: &[f64], dx: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(LoridError::InvalidArgument(
                "second density vanishes where the first does not".into(),
            ));
        }
        acc += a * (a / b).ln();
    }
    Ok(acc * dx)
}

/// Density of `sqrt(ab) x + s eps` on `out`, for `x` distributed on `grid`
/// with masses `p dx`.
fn push_forward(grid: &Grid1d, p: &[f64], ab: f64, out: &Grid1d) -> Vec<f64> {
    let s = (1.0 - ab).sqrt();
    let a = ab.sqrt();
    let dx = grid.dx();
    let norm = dx / (s * (2.0 * std::f64::consts::PI).sqrt());
    let xs = grid.points();
    (0..out.n)
        .into_par_iter()
        .map(|j| {
            let y = out.point(j);
            let mut acc = 0.0;
            for (&x, &px) in xs.iter().zip(p) {
                let z = (y - a * x) / s;
                if z.abs() < KERNEL_CUTOFF && px > 0.0 {
                    acc += px * (-0.5 * z * z).exp();
                }
            }
            acc * norm
        })
        .collect()
}

/// Quadrature `KL(q_t^(1) || q_t^(2))` for two 1-D densities tabulated on
/// `grid`. The diffused densities are evaluated on a grid with the same
/// spacing, widened by the kernel cutoff on both sides.
pub fn kl_quadrature_forward(grid: &Grid1d, p1: &[f64], p2: &[f64], schedule: &Schedule, t: usize) -> Result<f64> {
    check_density(grid, p1, "first density")?;
    check_density(grid, p2, "second density")?;
    ensure!(
        p1.iter().zip(p2).all(|(a, b)| *a == 0.0 || *b > 0.0),
        InvalidArgument,
        "first density must be absolutely continuous w.r.t. the second"
    );
    if t == 0 {
        return kl_on_grid(p1, p2, grid.dx());
    }
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let s = (1.0 - ab).sqrt();
    let a = ab.sqrt();
    let dx = grid.dx();
    let pad = ((KERNEL_CUTOFF * s) / dx).ceil() as usize;
    let lo = a * grid.lo - pad as f64 * dx;
    let span = a * (grid.hi - grid.lo);
    let inner = (span / dx).ceil() as usize;
    let out = Grid1d::new(lo, lo + (inner + 2 * pad) as f64 * dx, inner + 2 * pad + 1)?;
    let q1 = push_forward(grid, p1, ab, &out);
    let q2 = push_forward(grid, p2, ab, &out);
    for (q, name) in [(&q1, "first"), (&q2, "second")] {
        let drift = (out.mass(q) - 1.0).abs();
        ensure!(
            drift <= NORMALIZATION_TOL,
            NoConvergence,
            "grid too coarse at t = {t}: {name} diffused density drifts {drift:e} from unit mass"
        );
    }
    kl_on_grid(&q1, &q2, out.dx())
}

/// Largest increase `seq[i + 1] - seq[i]`, or 0 for a non-increasing sequence.
pub fn max_increase(seq: &[f64]) -> f64 {
    seq.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}
