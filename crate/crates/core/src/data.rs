//! JSONL dataset loaders shared by the pipeline, steering, and evaluation
//! paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One contrastive sentence pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairExample {
    pub toxic: String,
    pub nontoxic: String,
}

/// One evaluation prompt, optionally with a reference continuation for the
/// consistency metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptExample {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// One labeled probe-training text. Label 1 = toxic.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeExample {
    pub text: String,
    pub label: u8,
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("{what} file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line).map_err(|e| {
            Error::invalid(format!("{what} line {}: {e}", i + 1))
        })?;
        out.push(item);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{what} file {} is empty", path.display())));
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>> {
    load_jsonl(path, "pairs")
}

pub fn load_prompts(path: &Path) -> Result<Vec<PromptExample>> {
    load_jsonl(path, "prompts")
}

pub fn load_probe_examples(path: &Path) -> Result<Vec<ProbeExample>> {
    load_jsonl(path, "probe dataset")
}
