//! Dense linear algebra: one-sided Jacobi SVD, PSD eigendecomposition and
//! Cholesky factorization.

use crate::error::{ensure, LoridError, Result};
use crate::tensor::{dot, Matrix};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative; length `k = min(rows, cols)`.
    pub s: Vec<f64>,
    /// `k x cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for c in 0..k {
                let v = us.get(r, c) * self.s[c];
                us.set(r, c, v);
            }
        }
        us.matmul(&self.vt).expect("consistent svd factors")
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    ensure!(
        m.data().iter().all(|v| v.is_finite()),
        NonFinite,
        "svd input"
    );
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..n).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LoridError::NoConvergence(format!(
            "jacobi svd of {rows}x{n} after {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(i, c)| (dot(c, c).sqrt(), i)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let s_max = order.first().map_or(0.0, |o| o.0);
    let negligible = s_max * f64::EPSILON * rows.max(n) as f64;

    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &(sigma, idx)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > negligible && sigma > 0.0 {
            u_cols.push(a[idx].iter().map(|x| x / sigma).collect());
        } else {
            deficient.push(slot);
            u_cols.push(vec![0.0; rows]);
        }
    }
    complete_orthonormal_columns(&mut u_cols, &deficient);

    let u = Matrix::from_columns(&u_cols)?;
    let vt = Matrix::from_fn(n, n, |r, c| v[order[r].1][c]);
    Ok(SvdResult { u, s, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Replace the columns listed in `missing` by unit vectors orthogonal to
/// every other column (Gram-Schmidt on standard basis candidates).
pub(crate) fn complete_orthonormal_columns(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = cols[0].len();
    let mut filled: Vec<bool> = vec![true; cols.len()];
    for &m in missing {
        filled[m] = false;
    }
    let mut candidate = 0usize;
    for &m in missing {
        loop {
            assert!(candidate < rows, "orthonormal completion ran out of candidates");
            let mut w = vec![0.0; rows];
            w[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if filled[j] {
                        let proj = dot(&w, col);
                        for (wi, ci) in w.iter_mut().zip(col) {
                            *wi -= proj * ci;
                        }
                    }
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > 0.5 {
                cols[m] = w.into_iter().map(|x| x / norm).collect();
                filled[m] = true;
                break;
            }
        }
    }
}

/// Eigendecomposition of a symmetric positive semi-definite matrix.
/// Returns eigenvalues (descending) and a matrix whose columns are the
/// matching orthonormal eigenvectors.
pub fn psd_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure!(m.rows() == m.cols(), Shape, "psd_eigen needs a square matrix");
    let asym = m.sub(&m.transpose())?.max_abs();
    ensure!(
        asym <= 1e-9 * m.max_abs().max(1.0),
        InvalidArgument,
        "matrix is not symmetric (max asymmetry {asym:e})"
    );
    // For PSD input the right singular vectors diagonalize m^2 and hence m.
    let res = svd(m)?;
    let vecs = res.vt.transpose();
    // Negative eigenvalues show up as sign flips between u and v.
    for (k, &sigma) in res.s.iter().enumerate() {
        let agreement: f64 = (0..m.rows()).map(|r| res.u.get(r, k) * vecs.get(r, k)).sum();
        ensure!(
            agreement > 0.0 || sigma <= 1e-9 * res.s[0].max(1.0),
            InvalidArgument,
            "matrix is not positive semi-definite"
        );
    }
    Ok((res.s, vecs))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(m: &Matrix) -> Result<Self> {
        ensure!(m.rows() == m.cols(), Shape, "cholesky needs a square matrix");
        let n = m.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = m.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    ensure!(
                        sum > 0.0 && sum.is_finite(),
                        InvalidArgument,
                        "matrix is not positive definite (pivot {i} = {sum:e})"
                    );
                    l.set(i, i, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        (0..self.l.rows()).map(|i| 2.0 * self.l.get(i, i).ln()).sum()
    }

    /// Solve `m x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l.get(k, i) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        y
    }
}
