//! Factor-model generator for contrastive sentence-pair embeddings and the
//! capacity-recovery experiment built on it.
//!
//! Each paired sample decomposes into a shared stopword component a·μ, a
//! toxic component α·B·f present only on the positive side, a shared context
//! component B̃·f̃, and independent noise. Recovering span(B) from the
//! mean-centered difference matrix degrades as the toxic capacity α shrinks
//! toward the noise floor, which is exactly what the sweep measures.


use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, mean_center, norm, principal_angle, svd_thin, Tensor2D};
use crate::rng::stream;

/// Generator settings. Bases are stored with one basis vector per row.
#[derive(Clone, Debug)]
pub struct FactorSpec {
    pub dim: usize,
    /// Toxic basis, toxic_rank×dim orthonormal rows.
    pub basis_toxic: Tensor2D,
    /// Context basis, context_rank×dim orthonormal rows.
    pub basis_context: Tensor2D,
    /// Stopword mean vector, unit norm.
    pub mean_vec: Vec<f64>,
    /// Std of the per-sample stopword scalars a⁺, a⁻ around 1.
    pub a_std: f64,
    /// Toxic capacity α ≥ 0.
    pub alpha_tox: f64,
    /// Noise std σ_u per coordinate.
    pub sigma_u: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl FactorSpec {
    /// Build a spec with seeded random orthonormal structure: μ first, then
    /// B orthogonalized against it, then B̃ against both.
    pub fn seeded(
        dim: usize,
        toxic_rank: usize,
        context_rank: usize,
        n_samples: usize,
        alpha_tox: f64,
        sigma_u: f64,
        a_std: f64,
        seed: u64,
    ) -> Result<FactorSpec> {
        if toxic_rank + context_rank + 1 > dim {
            return Err(Error::invalid(
                "toxic_rank + context_rank + 1 must not exceed dim",
            ));
        }
        if alpha_tox < 0.0 || sigma_u < 0.0 || a_std < 0.0 {
            return Err(Error::invalid("scales must be non-negative"));
        }
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        let mut rng = stream(seed, "factor-bases");
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(1 + toxic_rank + context_rank);
        while frame.len() < 1 + toxic_rank + context_rank {
            let mut v: Vec<f64> = (0..dim).map(|_| gauss.sample(&mut rng)).collect();
            for prev in &frame {
                let p = dot(&v, prev);
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= p * pi;
                }
            }
            let n = norm(&v);
            if n < 1e-8 {
                continue; // essentially impossible; redraw
            }
            for vi in &mut v {
                *vi /= n;
            }
            frame.push(v);
        }
        let mean_vec = frame[0].clone();
        let basis_toxic = Tensor2D::from_rows(&frame[1..1 + toxic_rank])?;
        let basis_context = Tensor2D::from_rows(&frame[1 + toxic_rank..])?;
        let spec = FactorSpec {
            dim,
            basis_toxic,
            basis_context,
            mean_vec,
            a_std,
            alpha_tox,
            sigma_u,
            n_samples,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Orthogonality requirements: BᵀB̃ = 0, Bᵀμ = 0, B̃ᵀμ = 0, and both
    /// bases orthonormal — all within 1e-8.
    pub fn validate(&self) -> Result<()> {
        let mut max_dev: f64 = 0.0;
        for b in [&self.basis_toxic, &self.basis_context] {
            if b.cols() != self.dim {
                return Err(Error::invalid("basis dimension mismatch"));
            }
            max_dev = max_dev.max(crate::linalg::max_gram_deviation(b));
            for row in b.iter_rows() {
                max_dev = max_dev.max(dot(row, &self.mean_vec).abs());
            }
        }
        for t in self.basis_toxic.iter_rows() {
            for c in self.basis_context.iter_rows() {
                max_dev = max_dev.max(dot(t, c).abs());
            }
        }
        if max_dev > 1e-8 {
            return Err(Error::invalid(format!(
                "factor spec violates orthogonality: max deviation {max_dev:.3e}"
            )));
        }
        Ok(())
    }
}

/// Paired samples from the factor model. The negative rows contain no toxic
/// component by construction. Deterministic per seed.
pub fn generate_pairs(spec: &FactorSpec) -> Result<(Tensor2D, Tensor2D, Tensor2D)> {
    spec.validate()?;
    let mut rng = stream(spec.seed, "factor-samples");
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let k = spec.basis_toxic.rows();
    let k_ctx = spec.basis_context.rows();

    let mut pos = Vec::with_capacity(spec.n_samples);
    let mut neg = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let a_pos = 1.0 + spec.a_std * gauss.sample(&mut rng);
        let a_neg = 1.0 + spec.a_std * gauss.sample(&mut rng);
        let f: Vec<f64> = (0..k).map(|_| gauss.sample(&mut rng)).collect();
        let f_ctx: Vec<f64> = (0..k_ctx).map(|_| gauss.sample(&mut rng)).collect();
        let u_pos: Vec<f64> = (0..spec.dim).map(|_| spec.sigma_u * gauss.sample(&mut rng)).collect();
        let u_neg: Vec<f64> = (0..spec.dim).map(|_| spec.sigma_u * gauss.sample(&mut rng)).collect();

        let mut x_pos = vec![0.0; spec.dim];
        let mut x_neg = vec![0.0; spec.dim];
        for j in 0..spec.dim {
            let mut ctx = 0.0;
            for (c, row) in f_ctx.iter().zip(spec.basis_context.iter_rows()) {
                ctx += c * row[j];
            }
            let mut tox = 0.0;
            for (c, row) in f.iter().zip(spec.basis_toxic.iter_rows()) {
                tox += c * row[j];
            }
            x_pos[j] = a_pos * spec.mean_vec[j] + spec.alpha_tox * tox + ctx + u_pos[j];
            x_neg[j] = a_neg * spec.mean_vec[j] + ctx + u_neg[j];
        }
        pos.push(x_pos);
        neg.push(x_neg);
    }
    Ok((
        Tensor2D::from_rows(&pos)?,
        Tensor2D::from_rows(&neg)?,
        spec.basis_toxic.clone(),
    ))
}

/// One row of the recovery sweep output.
#[derive(Clone, Debug)]
pub struct RecoveryPoint {
    pub alpha_tox: f64,
    pub sigma_u: f64,
    pub seed: u64,
    pub principal_angle_deg: f64,
}

/// Recover span(B) from mean-centered X⁺−X⁻ at several toxic capacities,
/// over `n_seeds` replicates. Per-point seeds derive from the template seed
/// plus the point index, so the sweep parallelizes without changing output.
pub fn recovery_experiment(
    template: &FactorSpec,
    k_extract: usize,
    alphas: &[f64],
    n_seeds: u64,
) -> Result<Vec<RecoveryPoint>> {
    if k_extract < template.basis_toxic.rows() {
        return Err(Error::invalid(
            "k_extract must be at least the toxic rank",
        ));
    }
    if alphas.is_empty() || n_seeds == 0 {
        return Err(Error::invalid("empty sweep"));
    }
    let points: Vec<(u64, f64)> = (0..n_seeds)
        .flat_map(|s| alphas.iter().map(move |&a| (s, a)))
        .collect();
    points
        .par_iter()
        .enumerate()
        .map(|(index, &(seed_rep, alpha))| {
            let mut spec = template.clone();
            spec.alpha_tox = alpha;
            spec.seed = template.seed + index as u64;
            let angle = recovery_angle(&spec, k_extract)?;
            Ok(RecoveryPoint {
                alpha_tox: alpha,
                sigma_u: spec.sigma_u,
                seed: template.seed + seed_rep,
                principal_angle_deg: angle,
            })
        })
        .collect()
}

/// Mean-center X⁺−X⁻, take the top-k right singular vectors, and measure
/// the principal angle to the true toxic basis.
pub fn recovery_angle(spec: &FactorSpec, k_extract: usize) -> Result<f64> {
    let (x_pos, x_neg, basis) = generate_pairs(spec)?;
    let diff = x_pos.sub(&x_neg)?;
    let centered = mean_center(&diff)?;
    let svd = svd_thin(&centered, k_extract.min(centered.rows()).min(centered.cols()))?;
    let extracted = svd.right_vectors;
    principal_angle(&extracted, &basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec(alpha: f64, sigma: f64, a_std: f64, seed: u64) -> FactorSpec {
        FactorSpec::seeded(64, 2, 4, 256, alpha, sigma, a_std, seed).unwrap()
    }

    #[test]
    fn noiseless_shared_scalars_land_in_toxic_span() {
        // σ_u = 0 and a⁺ = a⁻ (a_std = 0): every difference row is exactly
        // α·B·f.
        let spec = base_spec(5.0, 0.0, 0.0, 11);
        let (x_pos, x_neg, basis) = generate_pairs(&spec).unwrap();
        let diff = x_pos.sub(&x_neg).unwrap();
        // Project each row onto span(B) and check the residual vanishes.
        for row in diff.iter_rows() {
            let mut residual: Vec<f64> = row.to_vec();
            for b in basis.iter_rows() {
                let p = dot(row, b);
                for (r, bi) in residual.iter_mut().zip(b) {
                    *r -= p * bi;
                }
            }
            assert!(norm(&residual) < 1e-9, "difference row left span(B)");
        }
    }

    #[test]
    fn zero_alpha_zero_noise_gives_zero_difference() {
        let spec = base_spec(0.0, 0.0, 0.0, 13);
        let (x_pos, x_neg, _) = generate_pairs(&spec).unwrap();
        let diff = x_pos.sub(&x_neg).unwrap();
        assert!(diff.frobenius_norm() < 1e-12);
    }

    #[test]
    fn generator_is_bit_reproducible_per_seed() {
        let spec = base_spec(5.0, 0.1, 0.1, 17);
        let (a1, b1, _) = generate_pairs(&spec).unwrap();
        let (a2, b2, _) = generate_pairs(&spec).unwrap();
        assert_eq!(a1.data(), a2.data());
        assert_eq!(b1.data(), b2.data());

        let other = base_spec(5.0, 0.1, 0.1, 18);
        let (a3, _, _) = generate_pairs(&other).unwrap();
        assert_ne!(a1.data(), a3.data());
    }

    #[test]
    fn strong_signal_recovers_the_basis() {
        let spec = base_spec(5.0, 0.05, 0.1, 19);
        let angle = recovery_angle(&spec, 2).unwrap();
        assert!(angle <= 5.0, "angle {angle} too large for strong signal");
    }

    #[test]
    fn zero_signal_cannot_recover() {
        let spec = base_spec(0.0, 0.1, 0.1, 23);
        let angle = recovery_angle(&spec, 2).unwrap();
        assert!(angle >= 45.0, "angle {angle} suspiciously small with no signal");
    }

    #[test]
    fn exact_span_membership_gives_tiny_angle() {
        // σ_u = 0 and a⁺ = a⁻: recovery is exact for any positive α.
        for alpha in [0.5, 1.0, 5.0] {
            let spec = base_spec(alpha, 0.0, 0.0, 29);
            let angle = recovery_angle(&spec, 2).unwrap();
            assert!(angle <= 1e-4, "angle {angle} for alpha {alpha}");
        }
    }

    #[test]
    fn sample_orthogonality_diagnostic_shrinks() {
        // |mean(fᵢ·f̃ᵢ)| over n=4096 stays under 0.05 (independence
        // diagnostic on the latent factors of the first coordinates).
        let spec = FactorSpec::seeded(32, 2, 4, 4096, 1.0, 0.1, 0.1, 31).unwrap();
        let mut rng = stream(spec.seed, "factor-samples");
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let mut acc = 0.0;
        for _ in 0..spec.n_samples {
            let _a_pos: f64 = gauss.sample(&mut rng);
            let _a_neg: f64 = gauss.sample(&mut rng);
            let f: Vec<f64> = (0..2).map(|_| gauss.sample(&mut rng)).collect();
            let f_ctx: Vec<f64> = (0..4).map(|_| gauss.sample(&mut rng)).collect();
            for _ in 0..2 * spec.dim {
                let _: f64 = gauss.sample(&mut rng);
            }
            acc += f[0] * f_ctx[0];
        }
        let mean = acc / spec.n_samples as f64;
        assert!(mean.abs() < 0.05, "latent factors look correlated: {mean}");
    }

    #[test]
    fn recovery_experiment_shape_and_determinism() {
        let template = base_spec(1.0, 0.1, 0.1, 37);
        let alphas = [0.0, 1.0, 5.0];
        let t1 = recovery_experiment(&template, 2, &alphas, 2).unwrap();
        let t2 = recovery_experiment(&template, 2, &alphas, 2).unwrap();
        assert_eq!(t1.len(), 6);
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.principal_angle_deg, b.principal_angle_deg);
        }
    }

    #[test]
    fn invariant_violation_reports_deviation() {
        let mut spec = base_spec(1.0, 0.1, 0.1, 41);
        // Break orthogonality between μ and the toxic basis.
        spec.mean_vec = spec.basis_toxic.row(0).to_vec();
        let err = generate_pairs(&spec).unwrap_err();
        assert!(err.to_string().contains("deviation"));
    }
}
