use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

/// Largest accepted `‖q − qᵀ‖_max`, relative to `max(1, ‖q‖_max)`.
const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiOptions {
    pub max_sweeps: usize,
    /// Convergence when the off-diagonal Frobenius norm drops to
    /// `tolerance · ‖q‖_F`, followed by one polishing sweep.
    pub tolerance: f64,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tolerance: 1e-12,
        }
    }
}

/// Eigenpairs of a symmetric matrix.
///
/// `eigenvalues` are sorted descending by signed value; column `i` of
/// `eigenvectors` belongs to `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenResult {
    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }

    /// `P Λ Pᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let p = &self.eigenvectors;
        let mut scaled = p.clone();
        for r in 0..n {
            for (c, lambda) in self.eigenvalues.iter().enumerate() {
                scaled.set(r, c, p.get(r, c) * lambda);
            }
        }
        let mut out = Matrix::zeros(n, n);
        super::gemm(1.0, &scaled, false, p, true, 0.0, &mut out);
        out
    }
}

/// Symmetric eigendecomposition with the default options
/// (100 sweeps, relative tolerance 1e-12).
pub fn eig_symmetric(q: &Matrix) -> Result<EigenResult> {
    eig_symmetric_with(q, JacobiOptions::default())
}

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix.
///
/// Rotations are applied to the symmetric part of `q`; inputs whose asymmetry
/// exceeds 1e-8 (relative) are rejected.
pub fn eig_symmetric_with(q: &Matrix, options: JacobiOptions) -> Result<EigenResult> {
    if !q.is_square() {
        return Err(Error::NotSquare {
            rows: q.rows(),
            cols: q.cols(),
        });
    }
    if q.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigensolver input"));
    }
    let asymmetry = q.asymmetry();
    if asymmetry > SYMMETRY_TOLERANCE * q.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }

    let n = q.rows();
    let mut a = Matrix::from_fn(n, n, |r, c| 0.5 * (q.get(r, c) + q.get(c, r)));
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let target = options.tolerance * scale;
    // Rotating entries this small cannot move the off-diagonal norm.
    let negligible = 1e-18 * scale;

    let mut off = off_diagonal_norm(&a);
    let mut sweeps = 0;
    while off > target {
        if sweeps == options.max_sweeps {
            return Err(Error::NoConvergence {
                sweeps,
                off_diagonal: off,
            });
        }
        sweep(&mut a, &mut v, negligible);
        sweeps += 1;
        off = off_diagonal_norm(&a);
    }
    // Convergence is quadratic here, so one more sweep takes the residual
    // from `target` down to rounding level.
    if sweeps > 0 {
        sweep(&mut a, &mut v, negligible);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let eigenvalues = order.iter().map(|&i| a.get(i, i)).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

fn sweep(a: &mut Matrix, v: &mut Matrix, negligible: f64) {
    let n = a.rows();
    for p in 0..n {
        for r in (p + 1)..n {
            let apq = a.get(p, r);
            if apq.abs() <= negligible {
                continue;
            }
            rotate(a, v, p, r, apq);
        }
    }
}

/// Annihilates `a[p][q]` with a plane rotation and accumulates it into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, apq: f64) {
    let n = a.rows();
    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let t = 1.0 / (theta.abs() + libm::sqrt(theta * theta + 1.0));
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / libm::sqrt(t * t + 1.0);
    let s = t * c;

    let app = a.get(p, p);
    let aqq = a.get(q, q);
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a.set(k, p, new_kp);
        a.set(p, k, new_kp);
        a.set(k, q, new_kq);
        a.set(q, k, new_kq);
    }
    for k in 0..n {
        let row = v.row_mut(k);
        let vkp = row[p];
        let vkq = row[q];
        row[p] = c * vkp - s * vkq;
        row[q] = s * vkp + c * vkq;
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                sum += a.get(r, c) * a.get(r, c);
            }
        }
    }
    libm::sqrt(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gemm;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                m.set(r, c, x);
                m.set(c, r, x);
            }
        }
        m
    }

    fn orthonormality(p: &Matrix) -> f64 {
        let mut ptp = Matrix::zeros(p.cols(), p.cols());
        gemm(1.0, p, true, p, false, 0.0, &mut ptp);
        ptp.identity_residual()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let r = eig_symmetric(&Matrix::identity(3)).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert!(orthonormality(&r.eigenvectors) < 1e-15);
    }

    #[test]
    fn swap_matrix_analytic() {
        let r = eig_symmetric(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-15);
        assert!((r.eigenvalues[1] + 1.0).abs() < 1e-15);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let v0 = r.eigenvector(0);
        let v1 = r.eigenvector(1);
        // Up to sign.
        assert!((v0[0] * v0[1] - 0.5).abs() < 1e-15 && (v0[0].abs() - h).abs() < 1e-15);
        assert!((v1[0] * v1[1] + 0.5).abs() < 1e-15 && (v1[0].abs() - h).abs() < 1e-15);
    }

    #[test]
    fn random_six_by_six_reconstructs_and_preserves_trace() {
        let q = random_symmetric(6, 7);
        let r = eig_symmetric(&q).unwrap();
        let residual = r.reconstruct().sub(&q).unwrap().frobenius_norm() / q.frobenius_norm();
        assert!(residual <= 1e-10, "residual {residual}");
        let sum: f64 = r.eigenvalues.iter().sum();
        assert!((sum - q.trace()).abs() <= 1e-10);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(orthonormality(&r.eigenvectors) <= 1e-10);
    }

    #[test]
    fn zero_and_empty_matrices() {
        let r = eig_symmetric(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(r.eigenvalues, vec![0.0; 4]);
        let r = eig_symmetric(&Matrix::zeros(0, 0)).unwrap();
        assert!(r.eigenvalues.is_empty());
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            eig_symmetric(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        assert!(matches!(
            eig_symmetric(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let q = random_symmetric(8, 1);
        let err = eig_symmetric_with(
            &q,
            JacobiOptions {
                max_sweeps: 1,
                tolerance: 1e-12,
            },
        )
        .unwrap_err();
        match err {
            Error::NoConvergence {
                sweeps,
                off_diagonal,
            } => {
                assert_eq!(sweeps, 1);
                assert!(off_diagonal > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diagonalizes_to_tolerance() {
        for seed in 0..5 {
            let q = random_symmetric(20, seed);
            let r = eig_symmetric(&q).unwrap();
            let p = &r.eigenvectors;
            let mut qp = Matrix::zeros(20, 20);
            gemm(1.0, &q, false, p, false, 0.0, &mut qp);
            let mut ptqp = Matrix::zeros(20, 20);
            gemm(1.0, p, true, &qp, false, 0.0, &mut ptqp);
            let mut worst = 0.0f64;
            for i in 0..20 {
                for j in 0..20 {
                    if i != j {
                        worst = worst.max(ptqp.get(i, j).abs());
                    }
                }
            }
            assert!(worst <= 1e-9 * q.frobenius_norm());
        }
    }
}
