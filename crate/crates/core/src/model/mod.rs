//! Desk-scale decoder-only transformer: two FFN variants, pre-norm causal
//! attention over a residual stream, per-layer activation capture, greedy
//! generation, and a bit-exact weight archive.

mod archive;
mod attention;
mod config;
mod ffn;
mod forward;
mod weights;

pub use archive::{load_bundle, save_bundle};
pub use attention::{causal_attention, rms_norm};
pub use config::{FfnKind, ModelConfig};
pub use ffn::{ffn_forward, ffn_gated, ffn_two_layer, gelu, silu};
pub use forward::{forward, generate_greedy, ActivationTrace, CoeffIntervention, LayerTrace};
pub use weights::{FfnWeights, LayerWeights, ModelBundle};
