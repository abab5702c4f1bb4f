use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use fewtag::emission::{build_scorer, Ablation, ScorerConfig, Variant};
use fewtag::episodes::DEFAULT_SKIP_PROB;
use fewtag::training::{Decoder, TrainConfig};

use crate::UsageError;

/// Everything a run needs; loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpora: Vec<PathBuf>,
    pub store: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub train_episodes: Option<PathBuf>,
    pub dev_episodes: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub d_proj: Option<usize>,
    pub n_pool: usize,
    /// Width of the hash embeddings used when no store is given.
    pub dim: usize,
    pub embed_seed: u64,
    pub ablate: Vec<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::LTapNet,
            alpha: None,
            beta: None,
            d_proj: None,
            n_pool: 32,
            dim: 64,
            embed_seed: 0,
            ablate: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn scorer(&self) -> Result<ScorerConfig> {
        let mut cfg = build_scorer(self.variant, &self.ablate)
            .map_err(UsageError::from)?
            .with_factors(self.alpha, self.beta)
            .map_err(UsageError::from)?;
        cfg.d_proj = self.d_proj;
        cfg.validate().map_err(UsageError::from)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub decoder: Option<Decoder>,
    pub bigram: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![0],
            decoder: None,
            bigram: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    pub episodes: usize,
    pub queries: usize,
    pub skip_prob: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 1,
            episodes: 100,
            queries: 20,
            skip_prob: DEFAULT_SKIP_PROB,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))
            .context("loading configuration")?;
        Ok(cfg)
    }
}

/// Replaces `{seed}` in a path.
pub fn with_seed(path: &Path, seed: u64) -> PathBuf {
    PathBuf::from(path.to_string_lossy().replace("{seed}", &seed.to_string()))
}

/// Fails with a usage error unless the path exists.
pub fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(UsageError(format!("no such file: {}", path.display())).into())
    }
}
