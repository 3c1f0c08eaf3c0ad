//! Causal multi-head softmax attention with pre-normalization.

use crate::linalg::dot;

use super::weights::LayerWeights;

const RMS_EPS: f64 = 1e-12;

/// RMS-style normalization: x / RMS(x) · gain, elementwise gain.
pub fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// Causal attention over the already-normalized inputs, one output per
/// position. `xs` holds one row per position.
pub fn causal_attention(xs: &[Vec<f64>], w: &LayerWeights, n_heads: usize) -> Vec<Vec<f64>> {
    let t = xs.len();
    let d = w.attn_query.cols();
    let head_dim = d / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let project = |m: &crate::linalg::Tensor2D, x: &[f64]| -> Vec<f64> {
        m.iter_rows().map(|row| dot(row, x)).collect()
    };
    let qs: Vec<Vec<f64>> = xs.iter().map(|x| project(&w.attn_query, x)).collect();
    let ks: Vec<Vec<f64>> = xs.iter().map(|x| project(&w.attn_key, x)).collect();
    let vs: Vec<Vec<f64>> = xs.iter().map(|x| project(&w.attn_value, x)).collect();

    let mut outputs = Vec::with_capacity(t);
    for i in 0..t {
        let mut mixed = vec![0.0; d];
        for h in 0..n_heads {
            let lo = h * head_dim;
            let hi = lo + head_dim;
            let q = &qs[i][lo..hi];

            let mut scores: Vec<f64> = (0..=i).map(|j| dot(q, &ks[j][lo..hi]) * scale).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                total += *s;
            }
            for (j, s) in scores.iter().enumerate() {
                let weight = s / total;
                for (k, m) in mixed[lo..hi].iter_mut().enumerate() {
                    *m += weight * vs[j][lo + k];
                }
            }
        }
        outputs.push(project(&w.attn_output, &mixed));
    }
    outputs
}
