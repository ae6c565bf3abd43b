//! Symmetric eigendecomposition (cyclic Jacobi) and the matrix exponential
//! built on it.
//!
//! The transition-rate matrices this crate exponentiates are symmetric by
//! construction, so one factorization serves every diffusion step:
//! `exp(t R) = V diag(exp(t lambda)) V^T`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Absolute tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigendecomposition `A = V diag(lambda) V^T` of a symmetric matrix.
///
/// `eigenvectors` holds V with eigenvectors as columns, orthogonal to within
/// 1e-8. Eigenvalues are sorted ascending.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Tensor,
}

impl SymEig {
    /// `V diag(f(lambda)) V^T` for an arbitrary spectral map.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        // W = V * diag(f(lambda)), then W x V^T.
        let mut w = v.to_vec();
        for row in w.chunks_mut(n) {
            for (j, x) in row.iter_mut().enumerate() {
                *x *= f(self.eigenvalues[j]);
            }
        }
        let w = Tensor::from_vec(vec![n, n], w);
        let m = w.matmul_nt(v);
        // Symmetrize away roundoff asymmetry.
        let mut data = m.to_vec();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
        Tensor::from_vec(vec![n, n], data)
    }

    /// `exp(t A)` from the stored factorization.
    pub fn expm(&self, t: f64) -> Tensor {
        self.spectral_map(|lambda| (t * lambda).exp())
    }

    /// Reconstructs the factored matrix.
    pub fn reconstruct(&self) -> Tensor {
        self.spectral_map(|lambda| lambda)
    }
}

fn check_square_symmetric(a: &Tensor) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.shape()[0];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a.at2(i, j) - a.at2(j, i)).abs();
            if d > SYMMETRY_TOL {
                return Err(Error::contract(format!(
                    "matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {d:e}"
                )));
            }
        }
    }
    Ok(n)
}

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
pub fn sym_eig(a: &Tensor) -> Result<SymEig> {
    let n = check_square_symmetric(a)?;
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        s
    };
    let scale = a.max_abs().max(1.0);
    let tol = (1e-15 * scale) * (1e-15 * scale) * (n * n) as f64;

    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of M.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                // Accumulate the rotation into V.
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[i * n + i]
            .partial_cmp(&m[j * n + j])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs[row * n + col] = v[row * n + src];
        }
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors: Tensor::from_vec(vec![n, n], vecs),
    })
}

/// `exp(t R)` for symmetric `R` and `t >= 0`.
///
/// Asymmetric input is rejected as a contract violation rather than handled
/// by a general-purpose fallback; the schedule construction that feeds this
/// function only ever produces symmetric rate matrices.
pub fn sym_expm(r: &Tensor, t: f64) -> Result<Tensor> {
    if !(t >= 0.0) {
        return Err(Error::contract(format!("sym_expm requires t >= 0, got {t}")));
    }
    Ok(sym_eig(r)?.expm(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rng::Rng;

    fn random_symmetric(n: usize, rng: &mut Rng) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Tensor::from_vec(vec![n, n], data)
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = Rng::new(11);
        for n in [2usize, 3, 6, 12] {
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eig(&a).unwrap();
            let rec = eig.reconstruct();
            let num = rec.sub(&a).sq_norm().sqrt();
            let den = a.sq_norm().sqrt().max(1e-300);
            assert!(num / den < 1e-8, "relative Frobenius error {}", num / den);
            let vtv = eig.eigenvectors.matmul_tn(&eig.eigenvectors);
            let err = vtv.sub(&Tensor::eye(n)).max_abs();
            assert!(err < 1e-8, "V^T V deviates from I by {err}");
        }
    }

    #[test]
    fn expm_identity_at_zero() {
        let r = Tensor::from_vec(vec![2, 2], vec![-1.0, 1.0, 1.0, -1.0]);
        let q = sym_expm(&r, 0.0).unwrap();
        assert!(q.sub(&Tensor::eye(2)).max_abs() < 1e-12);
    }

    #[test]
    fn expm_two_state_closed_form() {
        // exp(tR) for R = [[-1,1],[1,-1]] is
        // 1/2 [[1+e^{-2t}, 1-e^{-2t}], [1-e^{-2t}, 1+e^{-2t}]].
        let r = Tensor::from_vec(vec![2, 2], vec![-1.0, 1.0, 1.0, -1.0]);
        let q = sym_expm(&r, 0.5).unwrap();
        let e = (-1.0f64).exp();
        let expect = [(1.0 + e) / 2.0, (1.0 - e) / 2.0, (1.0 - e) / 2.0, (1.0 + e) / 2.0];
        for (got, want) in q.to_vec().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((q.at2(0, 0) - 0.683940).abs() < 1e-6);
        assert!((q.at2(0, 1) - 0.316060).abs() < 1e-6);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = Tensor::from_vec(vec![2, 2], vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(sym_expm(&a, 1.0), Err(Error::Contract(_))));
    }
}
