//! Cyclic Jacobi eigendecomposition for symmetric matrices.
//!
//! Deterministic: fixed sweep order, fixed rotation formulas, no pivot
//! search randomness. Adequate for the dense symmetric problems this crate
//! produces (Gram matrices up to a few thousand on a side).

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
///
/// Returns `(eigenvalues, eigenvectors)` where row `i` of the eigenvector
/// matrix is the unit eigenvector for `eigenvalues[i]`. Ties keep the
/// pre-sort (rotation) order, which is itself deterministic.
pub fn symmetric_eigen_desc(m: &Tensor2D) -> Result<(Vec<f64>, Tensor2D)> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::invalid("eigendecomposition requires a square matrix"));
    }
    if n == 0 {
        return Err(Error::invalid("eigendecomposition of empty matrix"));
    }
    let mut a: Vec<f64> = m.data().to_vec();
    // v holds eigenvectors as columns while we rotate.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale = m.frobenius_norm().max(1.0);
    let tol = f64::EPSILON * scale;

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
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
    let eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap_or(std::cmp::Ordering::Equal));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vectors = Tensor2D::zeros(n, n);
    for (row, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(row, k, v[k * n + src]);
        }
    }
    Ok((eigenvalues, vectors))
}
