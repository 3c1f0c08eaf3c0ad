use crate::error::{Error, Result};
use crate::linalg::Tensor2D;

use super::config::{FfnKind, ModelConfig};

/// FFN weights for one layer, in one of the two supported variants. The
/// residual-stream-side value vectors live in `value` rows (two-layer) or
/// `down` columns (gated).
#[derive(Clone, Debug)]
pub enum FfnWeights {
    TwoLayer {
        /// d_m×d input projection; row i scores coefficient mᵢ.
        key: Tensor2D,
        /// d_m×d output projection; row i is value vector vᵢ.
        value: Tensor2D,
    },
    Gated {
        /// d_m×d gate projection.
        gate: Tensor2D,
        /// d_m×d up projection.
        up: Tensor2D,
        /// d×d_m down projection; column i is value vector vᵢ.
        down: Tensor2D,
    },
}

/// One transformer layer: attention projections, FFN weights, and the two
/// RMS-norm gains (pre-attention and pre-FFN).
#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub attn_query: Tensor2D,
    pub attn_key: Tensor2D,
    pub attn_value: Tensor2D,
    pub attn_output: Tensor2D,
    pub norm_attn_gain: Vec<f64>,
    pub norm_ffn_gain: Vec<f64>,
    pub ffn: FfnWeights,
}

impl LayerWeights {
    /// Layer with zeroed attention and unit norm gains around the given FFN.
    pub fn zero_attention(d: usize, ffn: FfnWeights) -> Self {
        LayerWeights {
            attn_query: Tensor2D::zeros(d, d),
            attn_key: Tensor2D::zeros(d, d),
            attn_value: Tensor2D::zeros(d, d),
            attn_output: Tensor2D::zeros(d, d),
            norm_attn_gain: vec![1.0; d],
            norm_ffn_gain: vec![1.0; d],
            ffn,
        }
    }

    pub fn is_gated(&self) -> bool {
        matches!(self.ffn, FfnWeights::Gated { .. })
    }

    pub fn two_layer(&self) -> Option<(&Tensor2D, &Tensor2D)> {
        match &self.ffn {
            FfnWeights::TwoLayer { key, value } => Some((key, value)),
            FfnWeights::Gated { .. } => None,
        }
    }

    pub fn gated(&self) -> Option<(&Tensor2D, &Tensor2D, &Tensor2D)> {
        match &self.ffn {
            FfnWeights::Gated { gate, up, down } => Some((gate, up, down)),
            FfnWeights::TwoLayer { .. } => None,
        }
    }

    /// Value vector i of this layer as an owned vector (length d).
    pub fn value_vector(&self, i: usize) -> Vec<f64> {
        match &self.ffn {
            FfnWeights::TwoLayer { value, .. } => value.row(i).to_vec(),
            FfnWeights::Gated { down, .. } => (0..down.rows()).map(|j| down.get(j, i)).collect(),
        }
    }

    /// Number of value vectors (d_m).
    pub fn n_value_vectors(&self) -> usize {
        match &self.ffn {
            FfnWeights::TwoLayer { value, .. } => value.rows(),
            FfnWeights::Gated { down, .. } => down.cols(),
        }
    }

    /// Overwrite value vector i.
    pub fn set_value_vector(&mut self, i: usize, v: &[f64]) {
        match &mut self.ffn {
            FfnWeights::TwoLayer { value, .. } => {
                value.row_mut(i).copy_from_slice(v);
            }
            FfnWeights::Gated { down, .. } => {
                for (j, &x) in v.iter().enumerate() {
                    down.set(j, i, x);
                }
            }
        }
    }

    fn validate(&self, cfg: &ModelConfig, layer: usize) -> Result<()> {
        let d = cfg.d;
        let d_m = cfg.d_m;
        let shape_err = |name: &str| {
            Err(Error::invalid(format!(
                "layer {layer} tensor `{name}` has wrong shape"
            )))
        };
        for (name, t) in [
            ("attn_query", &self.attn_query),
            ("attn_key", &self.attn_key),
            ("attn_value", &self.attn_value),
            ("attn_output", &self.attn_output),
        ] {
            if t.rows() != d || t.cols() != d {
                return shape_err(name);
            }
        }
        if self.norm_attn_gain.len() != d || self.norm_ffn_gain.len() != d {
            return shape_err("norm gains");
        }
        match (&self.ffn, cfg.ffn_kind) {
            (FfnWeights::TwoLayer { key, value }, FfnKind::TwoLayer) => {
                if key.rows() != d_m || key.cols() != d {
                    return shape_err("ffn_key");
                }
                if value.rows() != d_m || value.cols() != d {
                    return shape_err("ffn_value");
                }
            }
            (FfnWeights::Gated { gate, up, down }, FfnKind::Gated) => {
                if gate.rows() != d_m || gate.cols() != d {
                    return shape_err("ffn_gate");
                }
                if up.rows() != d_m || up.cols() != d {
                    return shape_err("ffn_up");
                }
                if down.rows() != d || down.cols() != d_m {
                    return shape_err("ffn_down");
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "layer {layer} FFN variant does not match config"
                )))
            }
        }
        Ok(())
    }
}

/// A complete toy transformer: config, tied embedding table, learned
/// absolute positions, per-layer weights, and the vocabulary.
///
/// Immutable after construction/load; forward passes over it are read-only
/// and safe to run concurrently.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    /// vocab_size×d, used for both input lookup and the output lens (tied).
    pub embedding: Tensor2D,
    /// max_seq×d learned absolute positions.
    pub pos_embedding: Tensor2D,
    pub layers: Vec<LayerWeights>,
    /// Token strings; index = id.
    pub vocab: Vec<String>,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.embedding.rows() != self.config.vocab_size || self.embedding.cols() != self.config.d
        {
            return Err(Error::invalid("embedding shape mismatch"));
        }
        if self.pos_embedding.rows() != self.config.max_seq
            || self.pos_embedding.cols() != self.config.d
        {
            return Err(Error::invalid("positional embedding shape mismatch"));
        }
        if self.layers.len() != self.config.n_layers {
            return Err(Error::invalid(format!(
                "expected {} layers, found {}",
                self.config.n_layers,
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(&self.config, i)?;
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::invalid(format!(
                "vocab length {} does not match vocab_size {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Whitespace tokenizer over the archived vocab; OOV maps to id 0
    /// (`<unk>`).
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|word| {
                self.vocab
                    .iter()
                    .position(|v| v == word)
                    .map(|i| i as u32)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn token_string(&self, id: u32) -> &str {
        self.vocab
            .get(id as usize)
            .map(|s| s.as_str())
            .unwrap_or("<unk>")
    }
}
