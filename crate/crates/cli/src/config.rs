use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use bbio_core::taskgen::{default_templates, QualityConfig, ReasoningTemplate};
use bbio_core::train::TrainConfig;

use crate::Failure;

/// Task generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Line-delimited source documents. A synthetic corpus is used when unset.
    pub corpus: Option<PathBuf>,
    /// Size of the synthetic corpus.
    pub n_docs: usize,
    pub quality: QualityConfig,
    pub templates: Vec<ReasoningTemplate>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            n_docs: 1000,
            quality: QualityConfig::default(),
            templates: default_templates(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Curated dataset to train on. A synthetic environment is used when
    /// unset.
    pub dataset: Option<PathBuf>,
    pub generate: GenerateConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: None,
            generate: GenerateConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads the config file (or defaults), applies command-line overrides
    /// and resolves relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, Failure> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(Failure::config)?;
                let mut cfg: RunConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
                    .map_err(Failure::config)?;
                let base = p.parent().unwrap_or(Path::new(""));
                let resolve = |q: &mut PathBuf| {
                    if q.is_relative() {
                        *q = base.join(&*q);
                    }
                };
                resolve(&mut cfg.out);
                if let Some(d) = cfg.dataset.as_mut() {
                    resolve(d);
                }
                if let Some(c) = cfg.generate.corpus.as_mut() {
                    resolve(c);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(o) = out {
            cfg.out = o;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.train.validate().map_err(Failure::from_core)?;
        cfg.generate.quality.validate().map_err(Failure::from_core)?;
        Ok(cfg)
    }

    /// Writes the fully resolved configuration next to the run outputs.
    pub fn echo(&self, name: &str) -> Result<(), Failure> {
        let text = toml::to_string(self).context("serializing config").map_err(Failure::config)?;
        std::fs::create_dir_all(&self.out)
            .and_then(|_| std::fs::write(self.out.join(name), text))
            .with_context(|| format!("writing config echo to {}", self.out.display()))
            .map_err(Failure::io)
    }
}
