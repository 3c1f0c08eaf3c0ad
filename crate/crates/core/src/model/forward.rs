//! Forward pass with per-layer capture, coefficient interventions, and
//! greedy generation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Tensor2D;

use super::attention::{causal_attention, rms_norm};
use super::ffn::{ffn_forward, ffn_output_from_coeffs};
use super::weights::ModelBundle;

/// Hook that rewrites FFN coefficients before the value-vector sum. The
/// steering module provides implementations; the model only needs the layer
/// index and the raw coefficients.
pub trait CoeffIntervention: Sync {
    fn apply(&self, layer: usize, coeffs: &mut [f64]);
}

/// Captured tensors for one layer, one row per token position.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub hidden_in: Tensor2D,
    pub attn_out: Tensor2D,
    pub ffn_coeffs: Tensor2D,
    pub ffn_out: Tensor2D,
    pub hidden_out: Tensor2D,
}

/// Per-layer activation capture. Only the requested layers are populated.
/// Without interventions, hidden_out = hidden_in + attn_out + ffn_out holds
/// exactly at every captured layer.
#[derive(Clone, Debug, Default)]
pub struct ActivationTrace {
    pub layers: BTreeMap<usize, LayerTrace>,
}

impl ActivationTrace {
    pub fn layer(&self, l: usize) -> Option<&LayerTrace> {
        self.layers.get(&l)
    }
}

/// Run the decoder stack over a token sequence.
///
/// Logits are the final hidden states projected through the tied embedding
/// (one row per position). Interventions transform FFN coefficients before
/// the weighted sum at every position of every targeted layer.
pub fn forward(
    bundle: &ModelBundle,
    tokens: &[u32],
    capture: &[usize],
    intervene: Option<&dyn CoeffIntervention>,
) -> Result<(Tensor2D, ActivationTrace)> {
    let cfg = &bundle.config;
    if tokens.is_empty() {
        return Err(Error::invalid("forward requires at least one token"));
    }
    if tokens.len() > cfg.max_seq {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds max_seq {}",
            tokens.len(),
            cfg.max_seq
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {} out of range (vocab_size {})",
            bad, cfg.vocab_size
        )));
    }
    for (i, &l) in capture.iter().enumerate() {
        if l >= cfg.n_layers {
            return Err(Error::invalid(format!(
                "capture layer {} out of range ({} layers)",
                capture[i], cfg.n_layers
            )));
        }
        let _ = l;
    }

    let t = tokens.len();
    let mut hidden: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(pos, &tok)| {
            let e = bundle.embedding.row(tok as usize);
            let p = bundle.pos_embedding.row(pos);
            e.iter().zip(p).map(|(a, b)| a + b).collect()
        })
        .collect();

    let mut trace = ActivationTrace::default();

    for (l, layer) in bundle.layers.iter().enumerate() {
        let wants_capture = capture.contains(&l);
        let hidden_in = if wants_capture { Some(hidden.clone()) } else { None };

        let normed: Vec<Vec<f64>> = hidden
            .iter()
            .map(|x| rms_norm(x, &layer.norm_attn_gain))
            .collect();
        let attn = causal_attention(&normed, layer, cfg.n_heads);

        let mid: Vec<Vec<f64>> = hidden
            .iter()
            .zip(&attn)
            .map(|(x, a)| x.iter().zip(a).map(|(xi, ai)| xi + ai).collect())
            .collect();

        let mut coeffs_rows: Vec<Vec<f64>> = Vec::with_capacity(t);
        let mut ffn_rows: Vec<Vec<f64>> = Vec::with_capacity(t);
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(t);
        for x_mid in &mid {
            let f_in = rms_norm(x_mid, &layer.norm_ffn_gain);
            let (mut coeffs, mut out) = ffn_forward(&f_in, layer)?;
            if let Some(hook) = intervene {
                let before = coeffs.clone();
                hook.apply(l, &mut coeffs);
                if coeffs != before {
                    out = ffn_output_from_coeffs(&coeffs, layer)?;
                }
            }
            next.push(x_mid.iter().zip(&out).map(|(a, b)| a + b).collect());
            coeffs_rows.push(coeffs);
            ffn_rows.push(out);
        }

        if wants_capture {
            trace.layers.insert(
                l,
                LayerTrace {
                    hidden_in: Tensor2D::from_rows(&hidden_in.unwrap())?,
                    attn_out: Tensor2D::from_rows(&attn)?,
                    ffn_coeffs: Tensor2D::from_rows(&coeffs_rows)?,
                    ffn_out: Tensor2D::from_rows(&ffn_rows)?,
                    hidden_out: Tensor2D::from_rows(&next)?,
                },
            );
        }
        hidden = next;
    }

    let vocab = cfg.vocab_size;
    let mut logits = Tensor2D::zeros(t, vocab);
    for (pos, x) in hidden.iter().enumerate() {
        for v in 0..vocab {
            logits.set(pos, v, crate::linalg::dot(bundle.embedding.row(v), x));
        }
    }
    Ok((logits, trace))
}

/// Deterministic argmax continuation; ties break toward the lowest token id.
/// Returns exactly `n_new` ids. The intervention, when present, is active at
/// every generation step.
pub fn generate_greedy(
    bundle: &ModelBundle,
    prompt: &[u32],
    n_new: usize,
    intervene: Option<&dyn CoeffIntervention>,
) -> Result<Vec<u32>> {
    if n_new == 0 {
        return Err(Error::invalid("n_new must be at least 1"));
    }
    if prompt.is_empty() {
        return Err(Error::invalid("prompt must be non-empty"));
    }
    if prompt.len() + n_new > bundle.config.max_seq {
        return Err(Error::invalid(format!(
            "prompt length {} plus {} new tokens exceeds max_seq {}",
            prompt.len(),
            n_new,
            bundle.config.max_seq
        )));
    }
    let mut tokens = prompt.to_vec();
    let mut generated = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let (logits, _) = forward(bundle, &tokens, &[], intervene)?;
        let last = logits.row(logits.rows() - 1);
        let mut best = 0usize;
        for (i, &v) in last.iter().enumerate().skip(1) {
            if v > last[best] {
                best = i;
            }
        }
        tokens.push(best as u32);
        generated.push(best as u32);
    }
    Ok(generated)
}
