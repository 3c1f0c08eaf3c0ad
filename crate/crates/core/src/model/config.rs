use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which FFN variant a model uses. Two-layer is the GPT-2 style key/value
/// MLP; gated is the SiLU gate/up/down MLP used by newer decoder families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    TwoLayer,
    Gated,
}

/// Shape of a toy decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width (residual stream dimension).
    pub d: usize,
    /// FFN inner width (number of value vectors per layer).
    pub d_m: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Index 0 is reserved for `<unk>`.
    pub vocab_size: usize,
    pub ffn_kind: FfnKind,
    pub max_seq: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {} not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.d_m < 1 {
            return Err(Error::invalid("d_m must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid(
                "vocab_size must be at least 2 (index 0 is <unk>)",
            ));
        }
        if self.max_seq == 0 {
            return Err(Error::invalid("max_seq must be positive"));
        }
        Ok(())
    }
}
