use alloc::vec;
use alloc::vec::Vec;

use super::{axpy, dot, gemm, norm, Matrix};
use crate::{Error, Result};

/// Default relative cutoff for [`pseudo_inverse`].
pub const DEFAULT_RCOND: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;
const ORTHOGONALITY_EPS: f64 = 1e-15;

/// Thin SVD `a = U · diag(σ) · Vᵀ` with `k = min(rows, cols)` components.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub u: Matrix,
    /// Nonnegative, descending.
    pub singular_values: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        self.truncated(self.singular_values.len())
    }

    /// Best rank-`r` approximation `Σ_{i<r} σ_i u_i v_iᵀ`.
    pub fn truncated(&self, r: usize) -> Matrix {
        let r = r.min(self.singular_values.len());
        let m = self.u.rows();
        let n = self.v.rows();
        let us = Matrix::from_fn(m, r, |i, j| self.u.get(i, j) * self.singular_values[j]);
        let vr = Matrix::from_fn(n, r, |i, j| self.v.get(i, j));
        let mut out = Matrix::zeros(m, n);
        gemm(1.0, &us, false, &vr, true, 0.0, &mut out);
        out
    }

    /// Number of singular values above `rcond · σ_max`.
    pub fn numerical_rank(&self, rcond: f64) -> usize {
        let cutoff = rcond * self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > cutoff && s > 0.0)
            .count()
    }
}

/// Thin singular value decomposition by one-sided (Hestenes) Jacobi.
///
/// Columns of `U` belonging to exactly zero singular values are completed to
/// an orthonormal set, so both factors always have orthonormal columns.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    if a.rows() >= a.cols() {
        Ok(tall_svd(a))
    } else {
        let t = tall_svd(&a.transpose());
        Ok(SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

/// Requires `rows >= cols`.
fn tall_svd(a: &Matrix) -> SvdResult {
    let m = a.rows();
    let n = a.cols();
    // Rows of `g` are the working columns of A; rows of `vt` the columns of V.
    let mut g = a.transpose();
    let mut vt = Matrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(g.row(p), g.row(p));
                let beta = dot(g.row(q), g.row(q));
                let gamma = dot(g.row(p), g.row(q));
                if gamma == 0.0 || gamma.abs() <= ORTHOGONALITY_EPS * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = {
                    let t = 1.0 / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                    if zeta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_rows(&mut g, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = (0..n).map(|j| norm(g.row(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sigma[j] > 0.0 {
            u_cols.push(g.row(j).iter().map(|x| x / sigma[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            missing.push(slot);
        }
    }
    for slot in missing {
        u_cols[slot] = complete_basis(&u_cols, slot, m);
    }

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        u.set_column(slot, &u_cols[slot]);
        v.set_column(slot, vt.row(j));
    }
    SvdResult {
        u,
        singular_values: order.iter().map(|&j| sigma[j]).collect(),
        v,
    }
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to every nonzero column other than `slot`.
fn complete_basis(cols: &[Vec<f64>], slot: usize, m: usize) -> Vec<f64> {
    let mut best = vec![0.0; m];
    let mut best_norm = -1.0;
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        // Two Gram–Schmidt passes keep the result orthogonal to working precision.
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k != slot {
                    let proj = dot(c, &e);
                    axpy(-proj, c, &mut e);
                }
            }
        }
        let n = norm(&e);
        if n > best_norm {
            best_norm = n;
            best = e;
        }
        if n > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Moore–Penrose pseudo-inverse via the SVD, discarding singular values
/// below `rcond · σ_max`.
///
/// When `u` has full row rank, `u · u⁺ = I`; for rank-deficient input that
/// identity does not hold, but the four Penrose conditions still do.
pub fn pseudo_inverse(u: &Matrix, rcond: f64) -> Result<Matrix> {
    let s = svd(u)?;
    let cutoff = rcond * s.singular_values.first().copied().unwrap_or(0.0);
    let k = s.singular_values.len();
    let n = u.cols();
    let m = u.rows();
    let v_scaled = Matrix::from_fn(n, k, |i, j| {
        let sigma = s.singular_values[j];
        if sigma > cutoff && sigma > 0.0 {
            s.v.get(i, j) / sigma
        } else {
            0.0
        }
    });
    let mut out = Matrix::zeros(n, m);
    gemm(1.0, &v_scaled, false, &s.u, true, 0.0, &mut out);
    Ok(out)
}
