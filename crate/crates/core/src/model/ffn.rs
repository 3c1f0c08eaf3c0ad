//! The two FFN variants. Both are linear combinations of value vectors: the
//! coefficients come from the input side (plus a multiplicative gate in the
//! gated variant) and the output is Σᵢ mᵢ·vᵢ over the residual-stream-side
//! value vectors.

use crate::error::{Error, Result};
use crate::linalg::dot;

use super::weights::LayerWeights;

/// GELU, tanh approximation (GPT-2 constants).
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608;
    const CUBIC: f64 = 0.044715;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + CUBIC * x * x * x)).tanh())
}

/// SiLU: x·σ(x).
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Two-layer FFN: mᵢ = GELU(kᵢ·x), out = Σ mᵢ·vᵢ with vᵢ the rows of the
/// value projection. Returns the coefficients unmodified for capture.
pub fn ffn_two_layer(x: &[f64], w: &LayerWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let (key, value) = w
        .two_layer()
        .ok_or_else(|| Error::invalid("ffn_two_layer called on gated weights"))?;
    if x.len() != key.cols() {
        return Err(Error::invalid(format!(
            "ffn_two_layer input dimension {} does not match {}",
            x.len(),
            key.cols()
        )));
    }
    let coeffs: Vec<f64> = key.iter_rows().map(|k| gelu(dot(k, x))).collect();
    let out = weighted_row_sum(&coeffs, value.iter_rows().collect::<Vec<_>>().as_slice(), x.len());
    Ok((coeffs, out))
}

/// Gated FFN: mᵢ = SiLU(gᵢ·x)·(uᵢ·x), out = Σ mᵢ·vᵢ with vᵢ the columns of
/// the down projection.
pub fn ffn_gated(x: &[f64], w: &LayerWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    let (gate, up, down) = w
        .gated()
        .ok_or_else(|| Error::invalid("ffn_gated called on two-layer weights"))?;
    if x.len() != gate.cols() {
        return Err(Error::invalid(format!(
            "ffn_gated input dimension {} does not match {}",
            x.len(),
            gate.cols()
        )));
    }
    let coeffs: Vec<f64> = gate
        .iter_rows()
        .zip(up.iter_rows())
        .map(|(g, u)| silu(dot(g, x)) * dot(u, x))
        .collect();
    // Value vector i is column i of the down projection.
    let d = down.rows();
    let mut out = vec![0.0; d];
    for (j, o) in out.iter_mut().enumerate() {
        let row = down.row(j);
        *o = dot(&coeffs, row);
    }
    Ok((coeffs, out))
}

/// Coefficient-weighted sum over value-vector rows, computed as per-output
/// dot products.
fn weighted_row_sum(coeffs: &[f64], rows: &[&[f64]], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (j, o) in out.iter_mut().enumerate() {
        *o = coeffs
            .iter()
            .zip(rows)
            .map(|(m, row)| m * row[j])
            .sum::<f64>();
    }
    out
}

/// Apply the FFN matching the weights' variant.
pub fn ffn_forward(x: &[f64], w: &LayerWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.is_gated() {
        ffn_gated(x, w)
    } else {
        ffn_two_layer(x, w)
    }
}

/// Recompute only the output from already-transformed coefficients.
pub fn ffn_output_from_coeffs(coeffs: &[f64], w: &LayerWeights) -> Result<Vec<f64>> {
    if let Some((_, value)) = w.two_layer() {
        if coeffs.len() != value.rows() {
            return Err(Error::invalid("coefficient length mismatch"));
        }
        Ok(weighted_row_sum(
            coeffs,
            value.iter_rows().collect::<Vec<_>>().as_slice(),
            value.cols(),
        ))
    } else if let Some((_, _, down)) = w.gated() {
        if coeffs.len() != down.cols() {
            return Err(Error::invalid("coefficient length mismatch"));
        }
        let mut out = vec![0.0; down.rows()];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(coeffs, down.row(j));
        }
        Ok(out)
    } else {
        unreachable!("LayerWeights is always one of the two variants")
    }
}
