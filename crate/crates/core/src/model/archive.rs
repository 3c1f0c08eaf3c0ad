//! GTAR weight archive.
//!
//! Layout: magic "GTAR", u32 little-endian version (=1), u64 little-endian
//! manifest byte length, UTF-8 JSON manifest, contiguous payload. The
//! manifest carries the model config, the vocab, and one entry per tensor
//! ({name, dtype:"f32", shape, offset, byte_len}); tensors are row-major
//! little-endian f32, offsets relative to the payload start.
//!
//! In-memory arithmetic is f64; payloads are f32, so a load/save round trip
//! is bit-exact at 32-bit precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tensor2D;

use super::config::{FfnKind, ModelConfig};
use super::weights::{FfnWeights, LayerWeights, ModelBundle};

const MAGIC: &[u8; 4] = b"GTAR";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Tensor names in archive order: embedding tables first, then per-layer
/// attention, norm gains, and FFN tensors.
fn tensor_list(bundle: &ModelBundle) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let push_t = |out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, name: String, t: &Tensor2D| {
        out.push((name, vec![t.rows(), t.cols()], t.data().to_vec()));
    };
    push_t(&mut out, "embedding".into(), &bundle.embedding);
    push_t(&mut out, "pos_embedding".into(), &bundle.pos_embedding);
    for (l, layer) in bundle.layers.iter().enumerate() {
        push_t(&mut out, format!("layers.{l}.attn_query"), &layer.attn_query);
        push_t(&mut out, format!("layers.{l}.attn_key"), &layer.attn_key);
        push_t(&mut out, format!("layers.{l}.attn_value"), &layer.attn_value);
        push_t(&mut out, format!("layers.{l}.attn_output"), &layer.attn_output);
        out.push((
            format!("layers.{l}.norm_attn"),
            vec![1, layer.norm_attn_gain.len()],
            layer.norm_attn_gain.clone(),
        ));
        out.push((
            format!("layers.{l}.norm_ffn"),
            vec![1, layer.norm_ffn_gain.len()],
            layer.norm_ffn_gain.clone(),
        ));
        match &layer.ffn {
            FfnWeights::TwoLayer { key, value } => {
                push_t(&mut out, format!("layers.{l}.ffn_key"), key);
                push_t(&mut out, format!("layers.{l}.ffn_value"), value);
            }
            FfnWeights::Gated { gate, up, down } => {
                push_t(&mut out, format!("layers.{l}.ffn_gate"), gate);
                push_t(&mut out, format!("layers.{l}.ffn_up"), up);
                push_t(&mut out, format!("layers.{l}.ffn_down"), down);
            }
        }
    }
    out
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    let tensors = tensor_list(bundle);

    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, shape, data) in &tensors {
        let offset = payload.len() as u64;
        for &v in data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: shape.clone(),
            offset,
            byte_len: (data.len() * 4) as u64,
        });
    }

    let manifest = Manifest {
        config: bundle.config.clone(),
        vocab: bundle.vocab.clone(),
        tensors: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut file = fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::format("header", "file shorter than fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format("header", "bad magic (expected GTAR)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            "header",
            format!("unsupported version {version}"),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + manifest_len > bytes.len() {
        return Err(Error::format("manifest", "manifest extends past end of file"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| Error::format("manifest", format!("invalid JSON: {e}")))?;
    let payload = &bytes[16 + manifest_len..];

    let read = |name: &str| -> Result<Tensor2D> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(name, "tensor missing from manifest"))?;
        if entry.dtype != "f32" {
            return Err(Error::format(name, format!("unsupported dtype {}", entry.dtype)));
        }
        if entry.shape.len() != 2 {
            return Err(Error::format(name, "expected rank-2 shape"));
        }
        let count: usize = entry.shape.iter().product();
        if entry.byte_len as usize != count * 4 {
            return Err(Error::format(
                name,
                format!(
                    "shape {:?} implies {} bytes but manifest declares {}",
                    entry.shape,
                    count * 4,
                    entry.byte_len
                ),
            ));
        }
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        if end > payload.len() {
            return Err(Error::format(
                name,
                format!(
                    "payload truncated: needs bytes {}..{} of {}",
                    start,
                    end,
                    payload.len()
                ),
            ));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Tensor2D::new(entry.shape[0], entry.shape[1], data)
            .map_err(|e| Error::format(name, e.to_string()))
    };

    let embedding = read("embedding")?;
    let pos_embedding = read("pos_embedding")?;
    let mut layers = Vec::with_capacity(manifest.config.n_layers);
    for l in 0..manifest.config.n_layers {
        let ffn = match manifest.config.ffn_kind {
            FfnKind::TwoLayer => FfnWeights::TwoLayer {
                key: read(&format!("layers.{l}.ffn_key"))?,
                value: read(&format!("layers.{l}.ffn_value"))?,
            },
            FfnKind::Gated => FfnWeights::Gated {
                gate: read(&format!("layers.{l}.ffn_gate"))?,
                up: read(&format!("layers.{l}.ffn_up"))?,
                down: read(&format!("layers.{l}.ffn_down"))?,
            },
        };
        layers.push(LayerWeights {
            attn_query: read(&format!("layers.{l}.attn_query"))?,
            attn_key: read(&format!("layers.{l}.attn_key"))?,
            attn_value: read(&format!("layers.{l}.attn_value"))?,
            attn_output: read(&format!("layers.{l}.attn_output"))?,
            norm_attn_gain: read(&format!("layers.{l}.norm_attn"))?.data().to_vec(),
            norm_ffn_gain: read(&format!("layers.{l}.norm_ffn"))?.data().to_vec(),
            ffn,
        });
    }

    let bundle = ModelBundle {
        config: manifest.config,
        embedding,
        pos_embedding,
        layers,
        vocab: manifest.vocab,
    };
    bundle
        .validate()
        .map_err(|e| Error::format("bundle", e.to_string()))?;
    Ok(bundle)
}
