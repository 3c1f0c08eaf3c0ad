//! Pipeline configuration: a single JSON object with unknown keys rejected.
//! Relative paths resolve against the config file's directory, so a fixture
//! directory is runnable from anywhere. Flags override config fields;
//! GLOSS_THREADS overrides the thread count last.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Error carrying the exit-code classification.
#[derive(Debug)]
pub enum CliError {
    /// Configuration problem; message names the offending field. Exit 2.
    Config(String),
    /// Failure inside a pipeline stage or other core operation.
    Core(gloss_core::Error),
    Other(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl From<gloss_core::Error> for CliError {
    fn from(e: gloss_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(gloss_core::Error::Stage { stage, .. }) => match *stage {
                "extract" => 3,
                "rank" => 4,
                "subspace" => 5,
                "edit" => 6,
                _ => 1,
            },
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    pub mode: String,
    pub layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    /// Top-k over the union of all targeted layers instead of per layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Layer whose last-token hidden states train the probe; defaults to
    /// the final layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_layer: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_synth_dim")]
    pub dim: usize,
    #[serde(default = "default_toxic_rank")]
    pub toxic_rank: usize,
    #[serde(default = "default_context_rank")]
    pub context_rank: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sigma_u")]
    pub sigma_u: f64,
    #[serde(default = "default_a_std")]
    pub a_std: f64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_extract: Option<usize>,
}

fn default_synth_dim() -> usize {
    64
}
fn default_toxic_rank() -> usize {
    2
}
fn default_context_rank() -> usize {
    4
}
fn default_samples() -> usize {
    256
}
fn default_sigma_u() -> f64 {
    0.1
}
fn default_a_std() -> f64 {
    0.1
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 5.0]
}
fn default_seeds() -> u64 {
    10
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: default_synth_dim(),
            toxic_rank: default_toxic_rank(),
            context_rank: default_context_rank(),
            samples: default_samples(),
            sigma_u: default_sigma_u(),
            a_std: default_a_std(),
            alphas: default_alphas(),
            seeds: default_seeds(),
            k_extract: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract_layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Inclusive [start, end] layer range for the weight edit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_layers: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer: Option<SteerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Fetch a required path field and check the file exists.
    pub fn require_file(&self, value: &Option<String>, field: &str) -> CliResult<PathBuf> {
        let raw = value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing field `{field}`")))?;
        let path = self.resolve(raw);
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "field `{field}`: file not found: {}",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn output_dir(&self) -> CliResult<PathBuf> {
        let raw = self
            .config
            .output_dir
            .as_ref()
            .ok_or_else(|| CliError::Config("missing field `output_dir`".into()))?;
        Ok(self.resolve(raw))
    }
}

pub fn require<T: Copy>(value: Option<T>, field: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing field `{field}`")))
}
