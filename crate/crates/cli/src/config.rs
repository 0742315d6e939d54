//! Flat key/value run configuration read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use np_decoding::Error;

/// Every key a config file may set. Command-line flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ce: Option<PathBuf>,
    pub ce_out: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub target_mode: Option<String>,
    pub context_mode: Option<String>,
    pub k: Option<usize>,
    pub kmeans_iters: Option<usize>,
    pub kmeans_seed: Option<u64>,
    pub dim: Option<usize>,
    pub lambda: Option<f64>,
    pub window: Option<usize>,
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub async_period: Option<usize>,
    pub loss_variant: Option<String>,
    pub contrastive_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub beam: Option<usize>,
    pub topn: Option<usize>,
    pub hops: Option<usize>,
    pub dedup: Option<bool>,
    pub metrics: Option<String>,
    pub split_overlap: Option<bool>,
    pub token: Option<String>,
    pub instances: Option<usize>,
    pub epsilon: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, Error> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
