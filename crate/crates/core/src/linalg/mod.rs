//! Dense linear algebra: thin SVD via Gram eigendecomposition, uncentered
//! principal components, orthogonal projectors, cosine similarity and
//! principal angles. Deterministic sign conventions throughout so repeated
//! runs are bit-identical.

mod jacobi;
mod tensor;

pub use jacobi::symmetric_eigen_desc;
pub use tensor::{dot, norm, Tensor2D};

use crate::error::{Error, Result};

/// Thin SVD result. `right_vectors` holds one unit row per singular value.
///
/// Sign convention: each right vector's largest-magnitude entry is positive,
/// ties broken by lowest index. This makes results reproducible; the
/// decomposition itself only fixes vectors up to sign.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub right_vectors: Tensor2D,
    pub left_vectors: Option<Tensor2D>,
}

/// Top-k singular triplet of `m` via eigendecomposition of the smaller Gram
/// matrix (mᵀm or mmᵀ).
pub fn svd_thin(m: &Tensor2D, k: usize) -> Result<SvdResult> {
    let (r, c) = (m.rows(), m.cols());
    if k == 0 || k > r.min(c) {
        return Err(Error::invalid(format!(
            "svd_thin k={} out of range for {}x{} matrix",
            k, r, c
        )));
    }
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("svd_thin input contains non-finite values"));
    }

    let sigma_tol = m.frobenius_norm().max(1.0) * 1e-13;

    if c <= r {
        // Eigen of mᵀm gives right singular vectors directly.
        let (eigvals, eigvecs) = symmetric_eigen_desc(&m.gram_columns())?;
        let mut singular_values = Vec::with_capacity(k);
        let mut right = Vec::with_capacity(k);
        let mut left = Vec::with_capacity(k);
        let mut left_complete = true;
        for i in 0..k {
            let sigma = eigvals[i].max(0.0).sqrt();
            singular_values.push(sigma);
            let v = eigvecs.row(i).to_vec();
            if sigma > sigma_tol {
                let mut u = m.matvec(&v)?;
                for x in &mut u {
                    *x /= sigma;
                }
                left.push(u);
            } else {
                left.push(vec![0.0; r]);
                left_complete = false;
            }
            right.push(v);
        }
        let mut right = Tensor2D::from_rows(&right)?;
        let mut left_t = Tensor2D::from_rows(&left)?;
        apply_sign_convention(&mut right, Some(&mut left_t));
        Ok(SvdResult {
            singular_values,
            right_vectors: right,
            left_vectors: if left_complete { Some(left_t) } else { None },
        })
    } else {
        // Wide matrix: eigen of mmᵀ gives left vectors; map back for right.
        let (eigvals, eigvecs) = symmetric_eigen_desc(&m.gram_rows())?;
        let mt = m.transpose();
        let mut singular_values = Vec::with_capacity(k);
        let mut right: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut left = Vec::with_capacity(k);
        let mut deficient = Vec::new();
        for i in 0..k {
            let sigma = eigvals[i].max(0.0).sqrt();
            singular_values.push(sigma);
            let u = eigvecs.row(i).to_vec();
            if sigma > sigma_tol {
                let mut v = mt.matvec(&u)?;
                for x in &mut v {
                    *x /= sigma;
                }
                right.push(v);
            } else {
                right.push(vec![0.0; c]);
                deficient.push(i);
            }
            left.push(u);
        }
        // Null-space right vectors are not determined by the data; complete
        // them deterministically from the standard basis.
        for &i in &deficient {
            right[i] = complete_orthonormal(&right, i, c)?;
        }
        let mut right = Tensor2D::from_rows(&right)?;
        let mut left_t = Tensor2D::from_rows(&left)?;
        apply_sign_convention(&mut right, Some(&mut left_t));
        Ok(SvdResult {
            singular_values,
            right_vectors: right,
            left_vectors: if deficient.is_empty() {
                Some(left_t)
            } else {
                None
            },
        })
    }
}

/// Gram-Schmidt a standard basis vector against the non-placeholder rows.
/// Lowest-index basis vector with a healthy residual wins, so the completion
/// is deterministic.
fn complete_orthonormal(rows: &[Vec<f64>], skip: usize, dim: usize) -> Result<Vec<f64>> {
    for basis_idx in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[basis_idx] = 1.0;
        for (i, row) in rows.iter().enumerate() {
            if i == skip {
                continue;
            }
            let p = dot(&cand, row);
            for (cx, rx) in cand.iter_mut().zip(row) {
                *cx -= p * rx;
            }
        }
        let n = norm(&cand);
        if n > 1e-6 {
            for x in &mut cand {
                *x /= n;
            }
            return Ok(cand);
        }
    }
    Err(Error::Numeric(
        "could not complete orthonormal basis".into(),
    ))
}

/// Largest-magnitude entry positive, ties by lowest index. Left vectors flip
/// with their right partners to keep u·σ·vᵀ intact.
fn apply_sign_convention(right: &mut Tensor2D, mut left: Option<&mut Tensor2D>) {
    for i in 0..right.rows() {
        let row = right.row(i);
        let mut best = 0usize;
        let mut best_abs = row[0].abs();
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = j;
            }
        }
        if right.get(i, best) < 0.0 {
            for j in 0..right.cols() {
                let v = right.get(i, j);
                right.set(i, j, -v);
            }
            if let Some(l) = left.as_deref_mut() {
                for j in 0..l.cols() {
                    let v = l.get(i, j);
                    l.set(i, j, -v);
                }
            }
        }
    }
}

/// Subtract column means: result = m − 1·(column means)ᵀ.
pub fn mean_center(m: &Tensor2D) -> Result<Tensor2D> {
    if m.rows() == 0 {
        return Err(Error::invalid("mean_center of empty matrix"));
    }
    let (r, c) = (m.rows(), m.cols());
    let mut means = vec![0.0; c];
    for row in m.iter_rows() {
        for (mu, v) in means.iter_mut().zip(row) {
            *mu += v;
        }
    }
    for mu in &mut means {
        *mu /= r as f64;
    }
    let mut out = m.clone();
    for i in 0..r {
        let row = out.row_mut(i);
        for (v, mu) in row.iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    Ok(out)
}

/// Principal components of a stack of unit directions, UNCENTERED.
///
/// Returns the smallest r top right singular vectors such that the
/// cumulative σᵢ²/Σσ² reaches `eta`. The denominator runs over all singular
/// values of the stack. Directions share the dominant component by
/// construction here, so centering would subtract exactly the signal.
pub fn principal_components(directions: &Tensor2D, eta: f64) -> Result<Tensor2D> {
    if directions.rows() == 0 {
        return Err(Error::invalid("principal_components of empty stack"));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!(
            "eta must lie in (0,1], got {eta}"
        )));
    }
    for (i, row) in directions.iter_rows().enumerate() {
        let n = norm(row);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "direction row {} is not unit norm (norm {})",
                i, n
            )));
        }
    }
    let k_full = directions.rows().min(directions.cols());
    let svd = svd_thin(directions, k_full)?;
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::Numeric("direction stack has zero energy".into()));
    }
    let mut cum = 0.0;
    let mut r = k_full;
    for (i, s) in svd.singular_values.iter().enumerate() {
        cum += s * s;
        if cum / total >= eta {
            r = i + 1;
            break;
        }
    }
    let rows: Vec<Vec<f64>> = (0..r).map(|i| svd.right_vectors.row(i).to_vec()).collect();
    Tensor2D::from_rows(&rows)
}

/// P = Σ vᵢvᵢᵀ over the orthonormal basis rows.
pub fn projector_from_basis(basis: &Tensor2D) -> Result<Tensor2D> {
    let max_dev = max_gram_deviation(basis);
    if max_dev > 1e-6 {
        return Err(Error::invalid(format!(
            "basis rows are not orthonormal: max Gram deviation {max_dev:.3e}"
        )));
    }
    let d = basis.cols();
    let mut p = Tensor2D::zeros(d, d);
    for row in basis.iter_rows() {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                let v = p.get(i, j) + ri * row[j];
                p.set(i, j, v);
            }
        }
    }
    // Mirror the upper triangle so symmetry is exact, not just approximate.
    for i in 0..d {
        for j in 0..i {
            let v = p.get(j, i);
            p.set(i, j, v);
        }
    }
    Ok(p)
}

/// Largest |GGᵀ − I| entry over the basis rows.
pub fn max_gram_deviation(basis: &Tensor2D) -> f64 {
    let mut max_dev: f64 = 0.0;
    for i in 0..basis.rows() {
        for j in i..basis.rows() {
            let g = dot(basis.row(i), basis.row(j));
            let target = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((g - target).abs());
        }
    }
    max_dev
}

/// u·v / (‖u‖‖v‖), clamped into [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid("cosine dimension mismatch"));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu <= 1e-12 || nv <= 1e-12 {
        return Err(Error::invalid("cosine of (near-)zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Largest canonical angle between the row spans of `a` and `b`, in degrees:
/// arccos of the smallest singular value of a·bᵀ. Zero iff one span contains
/// the other (for equal ranks, iff the spans coincide).
pub fn principal_angle(a: &Tensor2D, b: &Tensor2D) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::invalid(format!(
            "principal_angle ambient dimension mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    for (name, basis) in [("a", a), ("b", b)] {
        let dev = max_gram_deviation(basis);
        if dev > 1e-6 {
            return Err(Error::invalid(format!(
                "principal_angle basis `{name}` not orthonormal (max deviation {dev:.3e})"
            )));
        }
    }
    let m = a.matmul_transposed(b)?;
    // Smallest singular value of m = sqrt of smallest eigenvalue of the
    // smaller Gram matrix.
    let gram = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_columns()
    };
    let (eigvals, _) = symmetric_eigen_desc(&gram)?;
    let smallest = eigvals.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    Ok(smallest.clamp(0.0, 1.0).acos().to_degrees())
}

/// Solve (A + ridge·I) x = b for symmetric positive semidefinite A via
/// Cholesky. Used by the least-squares reconstruction path.
pub(crate) fn solve_spd(a: &Tensor2D, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::invalid("solve_spd shape mismatch"));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j) + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numeric(
                        "solve_spd: matrix not positive definite".into(),
                    ));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Ok(x)
}
