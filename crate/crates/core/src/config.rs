//! Pipeline configuration: one TOML file with per-stage sections. Every field
//! has a default, so an empty file (or none) is valid; command-line flags
//! override individual values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::dense::Similarity;
use crate::late_interaction::Bits;
use crate::query_gen::PromptMode;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub generation: GenerationConfig,
    pub filter: FilterConfig,
    pub bm25: Bm25Config,
    pub dense: DenseConfig,
    pub colbert: ColbertConfig,
    pub mining: MiningConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
}

/// Default locations used when a subcommand's path flag is omitted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub documents: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub filtered_queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Chunk passages longer than this many tokens; 0 disables chunking.
    pub max_tokens: usize,
    pub overlap: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            overlap: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub backend: BackendKind,
    pub mode: PromptModeSetting,
    pub few_shot: Vec<String>,
    pub max_retries: u32,
    pub concurrency: usize,
    pub backoff_ms: u64,
    /// Mock backend: fraction of self-referencing queries.
    pub self_reference_rate: f64,
    pub timeout_secs: u64,
    pub temperature: Option<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            mode: PromptModeSetting::Aspect,
            few_shot: Vec::new(),
            max_retries: 2,
            concurrency: 4,
            backoff_ms: 500,
            self_reference_rate: 0.1,
            timeout_secs: 60,
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptModeSetting {
    #[default]
    Aspect,
    Basic,
}

impl From<PromptModeSetting> for PromptMode {
    fn from(m: PromptModeSetting) -> Self {
        match m {
            PromptModeSetting::Aspect => PromptMode::AspectGuided,
            PromptModeSetting::Basic => PromptMode::Basic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryRetriever {
    Bm25,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub recovery_k: usize,
    pub blacklist: Vec<String>,
    pub retriever: RecoveryRetriever,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            recovery_k: crate::query_filter::DEFAULT_RECOVERY_K,
            blacklist: crate::query_filter::default_blacklist(),
            retriever: RecoveryRetriever::Bm25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseConfig {
    pub dim: usize,
    pub similarity: Similarity,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            similarity: Similarity::Dot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColbertConfig {
    pub dim: usize,
    pub bits: Bits,
    /// `None` selects the default centroid count.
    pub n_centroids: Option<usize>,
    pub kmeans_iterations: usize,
    pub max_doc_tokens: usize,
}

impl Default for ColbertConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            bits: Bits::Two,
            n_centroids: None,
            kmeans_iterations: crate::kmeans::DEFAULT_ITERATIONS,
            max_doc_tokens: crate::late_interaction::DEFAULT_MAX_DOC_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub n_neg: usize,
    pub pool_depth: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            n_neg: crate::contrastive::DEFAULT_NEGATIVES,
            pool_depth: crate::contrastive::DEFAULT_POOL_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub init_noise: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub in_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            init_noise: 0.1,
            steps: 500,
            batch_size: 32,
            learning_rate: 1.0,
            momentum: 0.9,
            temperature: 1.0,
            in_batch: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub encoder_ratio: f64,
    pub decoder_ratio: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder_ratio: crate::pretrain::DEFAULT_ENCODER_RATIO,
            decoder_ratio: crate::pretrain::DEFAULT_DECODER_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub include_no_relevant: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: crate::metrics::DEFAULT_KS.to_vec(),
            include_no_relevant: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_owned()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes to JSON");
        Sha256::digest(canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
