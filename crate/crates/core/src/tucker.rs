//! Truncated HOSVD and the low-rank projection operator `TF`.
//!
//! An image `(H, W, C)` is tensorized into non-overlapping `p x p` patches,
//! giving a tensor of shape `(H/p, W/p, p*p, C)`. A dataset `(N, H, W, C)`
//! becomes `(N, H/p, W/p, p*p, C)`; the leading batch mode is never
//! decomposed. `TF` projects every decomposed mode onto the span of its
//! fitted factor matrix and maps the result back to image space.

use rand::Rng;

use crate::error::{ensure, LoridError, Result};
use crate::linalg::svd;
use crate::rng::gaussian_tensor;
use crate::tensor::{mode_product, unfold, Matrix, Tensor};

/// Number of decomposed modes of a tensorized image.
pub const TUCKER_MODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorizationLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
}

impl TensorizationLayout {
    pub fn new(image_shape: &[usize], patch: usize) -> Result<Self> {
        ensure!(
            image_shape.len() == 3,
            Shape,
            "image shape must be (H, W, C), got {image_shape:?}"
        );
        let (height, width, channels) = (image_shape[0], image_shape[1], image_shape[2]);
        ensure!(patch >= 1, InvalidArgument, "patch size must be >= 1");
        ensure!(
            height % patch == 0 && width % patch == 0,
            InvalidArgument,
            "patch {patch} does not divide image {height}x{width}"
        );
        ensure!(channels >= 1, Shape, "channels must be >= 1");
        Ok(Self {
            height,
            width,
            channels,
            patch,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn tensor_shape(&self) -> [usize; 4] {
        [
            self.height / self.patch,
            self.width / self.patch,
            self.patch * self.patch,
            self.channels,
        ]
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    // Offset of image pixel (i, j, c) inside the tensorized layout.
    fn tensor_offset(&self, i: usize, j: usize, c: usize) -> usize {
        let p = self.patch;
        let [_, gw, pp, ch] = self.tensor_shape();
        let (bi, bj) = (i / p, j / p);
        let inner = (i % p) * p + j % p;
        ((bi * gw + bj) * pp + inner) * ch + c
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        ensure!(
            x.shape() == self.image_shape(),
            Shape,
            "image {:?} does not match layout {:?}",
            x.shape(),
            self.image_shape()
        );
        Ok(())
    }

    /// `T(x)`: image to patch tensor.
    pub fn tensorize(&self, x: &Tensor) -> Result<Tensor> {
        self.check_image(x)?;
        let mut out = vec![0.0; x.len()];
        let src = x.data();
        let mut k = 0;
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..self.channels {
                    out[self.tensor_offset(i, j, c)] = src[k];
                    k += 1;
                }
            }
        }
        Tensor::new(self.tensor_shape().to_vec(), out)
    }

    /// `T^{-1}`: patch tensor back to image.
    pub fn detensorize(&self, t: &Tensor) -> Result<Tensor> {
        ensure!(
            t.shape() == self.tensor_shape(),
            Shape,
            "tensor {:?} does not match layout {:?}",
            t.shape(),
            self.tensor_shape()
        );
        let mut out = vec![0.0; t.len()];
        let src = t.data();
        let mut k = 0;
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..self.channels {
                    out[k] = src[self.tensor_offset(i, j, c)];
                    k += 1;
                }
            }
        }
        Tensor::new(self.image_shape().to_vec(), out)
    }

    /// Tensorize a dataset `(N, H, W, C)` into `(N, H/p, W/p, p*p, C)`.
    pub fn tensorize_batch(&self, dataset: &Tensor) -> Result<Tensor> {
        ensure!(
            dataset.order() == 4 && dataset.shape()[1..] == self.image_shape(),
            Shape,
            "dataset {:?} does not match image layout {:?}",
            dataset.shape(),
            self.image_shape()
        );
        let n = dataset.shape()[0];
        let per = self.image_len();
        let mut data = Vec::with_capacity(dataset.len());
        for s in 0..n {
            let img = Tensor::new(
                self.image_shape().to_vec(),
                dataset.data()[s * per..(s + 1) * per].to_vec(),
            )?;
            data.extend(self.tensorize(&img)?.into_data());
        }
        let mut shape = vec![n];
        shape.extend(self.tensor_shape());
        Tensor::new(shape, data)
    }
}

/// How many singular vectors to keep per decomposed mode.
#[derive(Debug, Clone, PartialEq)]
pub enum RankPolicy {
    /// One rank per decomposed mode.
    Explicit(Vec<usize>),
    /// Smallest rank retaining at least this fraction of squared singular values.
    Energy(f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Energy(0.95)
    }
}

/// Frozen Tucker factors fitted on clean data.
#[derive(Debug, Clone)]
pub struct TuckerBasis {
    layout: TensorizationLayout,
    factors: Vec<Matrix>,
    discarded_energy: Vec<f64>,
    projectors: Vec<Matrix>,
}

impl TuckerBasis {
    /// Assemble a basis from column-orthonormal factors.
    pub fn from_parts(
        layout: TensorizationLayout,
        factors: Vec<Matrix>,
        discarded_energy: Vec<f64>,
    ) -> Result<Self> {
        let dims = layout.tensor_shape();
        ensure!(
            factors.len() == TUCKER_MODES && discarded_energy.len() == TUCKER_MODES,
            Shape,
            "expected {TUCKER_MODES} factors and energies"
        );
        for (n, u) in factors.iter().enumerate() {
            ensure!(
                u.rows() == dims[n] && u.cols() <= dims[n],
                Shape,
                "factor {n} is {}x{} for mode size {}",
                u.rows(),
                u.cols(),
                dims[n]
            );
            let gram = u.transpose().matmul(u)?;
            let dev = gram.sub(&Matrix::identity(u.cols()))?.max_abs();
            ensure!(dev < 1e-8, InvalidArgument, "factor {n} is not orthonormal ({dev:e})");
        }
        ensure!(
            discarded_energy.iter().all(|e| *e >= 0.0 && e.is_finite()),
            InvalidArgument,
            "discarded energy must be finite and nonnegative"
        );
        let projectors = factors
            .iter()
            .map(|u| u.matmul(&u.transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            factors,
            discarded_energy,
            projectors,
        })
    }

    pub fn layout(&self) -> &TensorizationLayout {
        &self.layout
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::cols).collect()
    }

    /// Per-mode `sum_{i > r_n} sigma_i^2` recorded at fit time.
    pub fn discarded_energy(&self) -> &[f64] {
        &self.discarded_energy
    }

    pub fn total_discarded_energy(&self) -> f64 {
        self.discarded_energy.iter().sum()
    }

    pub fn is_full_rank(&self) -> bool {
        self.ranks()
            .iter()
            .zip(self.layout.tensor_shape())
            .all(|(&r, d)| r == d)
    }

    /// Orthonormal basis of the directions discarded on `mode`, if any.
    pub fn complement(&self, mode: usize) -> Option<Matrix> {
        let u = &self.factors[mode];
        let dim = u.rows();
        if u.cols() == dim {
            return None;
        }
        let mut cols: Vec<Vec<f64>> = (0..u.cols()).map(|c| u.column(c)).collect();
        let kept = cols.len();
        cols.extend((kept..dim).map(|_| vec![0.0; dim]));
        let missing: Vec<usize> = (kept..dim).collect();
        crate::linalg::complete_orthonormal_columns(&mut cols, &missing);
        Matrix::from_columns(&cols[kept..]).ok()
    }

    fn project_tensor(&self, t: &Tensor) -> Result<Tensor> {
        let mut out = t.clone();
        for (n, p) in self.projectors.iter().enumerate() {
            if self.factors[n].cols() < self.factors[n].rows() {
                out = mode_product(&out, p, n)?;
            }
        }
        Ok(out)
    }

    /// Core tensor `G = T(x) x_1 U_1^T .. x_4 U_4^T`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = self.layout.tensorize(x)?;
        for (n, u) in self.factors.iter().enumerate() {
            g = mode_product(&g, &u.transpose(), n)?;
        }
        Ok(g)
    }

    /// `T^{-1}(G x_1 U_1 .. x_4 U_4)`.
    pub fn decode(&self, core: &Tensor) -> Result<Tensor> {
        let mut t = core.clone();
        for (n, u) in self.factors.iter().enumerate().rev() {
            t = mode_product(&t, u, n)?;
        }
        self.layout.detensorize(&t)
    }
}

/// Fit per-mode factors on a clean dataset `(N, H, W, C)`.
pub fn fit_basis(
    dataset: &Tensor,
    layout: TensorizationLayout,
    policy: &RankPolicy,
) -> Result<TuckerBasis> {
    ensure!(
        dataset.order() == 4 && dataset.shape()[0] >= 1,
        InvalidArgument,
        "dataset must be a non-empty (N, H, W, C) tensor, got {:?}",
        dataset.shape()
    );
    let dims = layout.tensor_shape();
    if let RankPolicy::Explicit(ranks) = policy {
        ensure!(
            ranks.len() == TUCKER_MODES,
            InvalidArgument,
            "need {TUCKER_MODES} explicit ranks, got {}",
            ranks.len()
        );
        for (n, (&r, &d)) in ranks.iter().zip(&dims).enumerate() {
            ensure!(
                r >= 1 && r <= d,
                InvalidArgument,
                "rank {r} for mode {n} of size {d}"
            );
        }
    }
    if let RankPolicy::Energy(eta) = policy {
        ensure!(
            *eta > 0.0 && *eta <= 1.0,
            InvalidArgument,
            "energy fraction must lie in (0, 1], got {eta}"
        );
    }

    let tensorized = layout.tensorize_batch(dataset)?;
    let mut factors = Vec::with_capacity(TUCKER_MODES);
    let mut discarded = Vec::with_capacity(TUCKER_MODES);
    for n in 0..TUCKER_MODES {
        let unfolding = unfold(&tensorized, n + 1)?;
        let res = svd(&unfolding)?;
        let energies: Vec<f64> = res.s.iter().map(|s| s * s).collect();
        let available = res.u.cols();
        let rank = match policy {
            RankPolicy::Explicit(r) => r[n],
            RankPolicy::Energy(eta) => energy_rank(&energies, *eta, dims[n]),
        };
        let factor = if rank <= available {
            res.u.leading_columns(rank)
        } else {
            // Fewer samples than the mode size: pad with an orthonormal completion.
            let mut cols: Vec<Vec<f64>> = (0..available).map(|c| res.u.column(c)).collect();
            cols.extend((available..rank).map(|_| vec![0.0; dims[n]]));
            let missing: Vec<usize> = (available..rank).collect();
            crate::linalg::complete_orthonormal_columns(&mut cols, &missing);
            Matrix::from_columns(&cols)?
        };
        discarded.push(energies.iter().skip(rank).sum());
        factors.push(factor);
    }
    TuckerBasis::from_parts(layout, factors, discarded)
}

fn energy_rank(energies: &[f64], eta: f64, dim: usize) -> usize {
    if eta >= 1.0 {
        return dim;
    }
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, e) in energies.iter().enumerate() {
        acc += e;
        if acc >= eta * total {
            return i + 1;
        }
    }
    dim
}

/// `TF(x)`: orthogonal projection of every decomposed mode onto the fitted
/// subspaces.
pub fn tf_apply(x: &Tensor, basis: &TuckerBasis) -> Result<Tensor> {
    let t = basis.layout.tensorize(x)?;
    basis.layout.detensorize(&basis.project_tensor(&t)?)
}

/// `TF` applied independently to every image of an `(N, H, W, C)` batch.
pub fn tf_apply_batch(batch: &Tensor, basis: &TuckerBasis) -> Result<Tensor> {
    let images = batch.unstack()?;
    let out = images
        .iter()
        .map(|x| tf_apply(x, basis))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&out)
}

/// The two terms bounding the TF reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuckerErrorTerms {
    /// `||x - TF(x)||`.
    pub e_tucker: f64,
    /// `||TF(eps)||`.
    pub residual_noise: f64,
    /// `sum_n ||T(x) x_n (I - U_n U_n^T)||^2`: HOSVD bound on `e_tucker^2`
    /// evaluated for this input.
    pub projection_bound: f64,
}

pub fn tucker_error_terms(
    x_clean: &Tensor,
    eps: &Tensor,
    basis: &TuckerBasis,
) -> Result<TuckerErrorTerms> {
    x_clean.expect_same_shape(eps)?;
    let e_tucker = x_clean.sub(&tf_apply(x_clean, basis)?)?.frobenius_norm();
    let residual_noise = tf_apply(eps, basis)?.frobenius_norm();
    let t = basis.layout.tensorize(x_clean)?;
    let mut projection_bound = 0.0;
    for (n, p) in basis.projectors.iter().enumerate() {
        let kept = mode_product(&t, p, n)?;
        projection_bound += t.sub(&kept)?.squared_norm();
    }
    Ok(TuckerErrorTerms {
        e_tucker,
        residual_noise,
        projection_bound,
    })
}

/// Squared reconstruction error of a whole `(N, H, W, C)` dataset.
pub fn dataset_error_sq(dataset: &Tensor, basis: &TuckerBasis) -> Result<f64> {
    let projected = tf_apply_batch(dataset, basis)?;
    Ok(dataset.sub(&projected)?.squared_norm())
}

/// Gaussian noise confined to the discarded directions of every truncated
/// mode, scaled to Frobenius norm `norm`. `TF` maps it to zero.
pub fn discarded_noise<R: Rng + ?Sized>(
    basis: &TuckerBasis,
    norm: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let shape = basis.layout.tensor_shape();
    let mut z = gaussian_tensor(&shape, rng);
    let mut any = false;
    for n in 0..TUCKER_MODES {
        if let Some(c) = basis.complement(n) {
            let proj = c.matmul(&c.transpose())?;
            z = mode_product(&z, &proj, n)?;
            any = true;
        }
    }
    if !any {
        return Err(LoridError::InvalidArgument(
            "full-rank basis has no discarded directions".into(),
        ));
    }
    let img = basis.layout.detensorize(&z)?;
    let scale = norm / img.frobenius_norm();
    Ok(img.scale(scale))
}
