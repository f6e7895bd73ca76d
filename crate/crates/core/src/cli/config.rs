//! Strict TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::ModelConfig;
use crate::simulator::PromptSpec;
use crate::train::{PpoConfig, SftConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{field}: path does not exist: {path}")]
    MissingPath { field: &'static str, path: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Histories used for PPO rollouts; the training split when absent.
    pub ppo_prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Vocabulary cap, special tokens included.
    pub max_vocab: usize,
    pub min_freq: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            max_seq_len: m.max_seq_len,
            max_vocab: 1000,
            min_freq: 1,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Keyword-coverage oracle; needs `required_keywords` on every item.
    #[default]
    Scripted,
    /// Recorded completions only; never touches the network.
    Replay,
    /// OpenAI-style chat-completion endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Backend model id; names the cache file.
    pub model: String,
    pub endpoint: Option<String>,
    /// JSONL of few-shot examples; zero-shot prompting when absent.
    pub few_shot_pool: Option<PathBuf>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            model: "scripted".into(),
            endpoint: None,
            few_shot_pool: None,
            temperature: 0.0,
            max_tokens: 256,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub max_new_tokens: usize,
    /// Cap on evaluated held-out exchanges (0 = all).
    pub max_exchanges: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_new_tokens: 48,
            max_exchanges: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub corpus: CorpusPaths,
    pub model: ModelSection,
    pub sft: SftConfig,
    pub ppo: PpoConfig,
    pub prompt: PromptSpec,
    pub backend: BackendSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("runs"),
            corpus: CorpusPaths::default(),
            model: ModelSection::default(),
            sft: SftConfig::default(),
            ppo: PpoConfig::default(),
            prompt: PromptSpec::default(),
            backend: BackendSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text without resolving or validating paths.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })
    }

    /// Rewrites relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus.train,
            &mut self.corpus.dev,
            &mut self.corpus.test,
            &mut self.corpus.ppo_prompts,
            &mut self.backend.few_shot_pool,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.cache_dir);
        join(&mut self.output_dir);
    }

    /// Numeric invariants of every section plus existence of input paths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sft.validate().map_err(|e| invalid(&e))?;
        self.ppo.validate().map_err(|e| invalid(&e))?;
        self.prompt.validate().map_err(|e| invalid(&e))?;
        self.model
            .model_config(self.model.max_vocab)
            .validate()
            .map_err(|e| invalid(&e))?;
        if self.model.max_vocab < crate::policy::SPECIAL_TOKENS.len() + 1 {
            return Err(ConfigError::Invalid("model.max_vocab is too small".into()));
        }
        if self.eval.max_new_tokens == 0 {
            return Err(ConfigError::Invalid("eval.max_new_tokens must be >= 1".into()));
        }
        if self.backend.max_in_flight == 0 {
            return Err(ConfigError::Invalid("backend.max_in_flight must be >= 1".into()));
        }
        if !(self.backend.temperature >= 0.0) {
            return Err(ConfigError::Invalid("backend.temperature must be >= 0".into()));
        }
        if self.backend.kind != BackendKind::Scripted && self.backend.model.trim().is_empty() {
            return Err(ConfigError::Invalid("backend.model must be set".into()));
        }
        if self.backend.kind == BackendKind::Remote && self.backend.endpoint.is_none() {
            return Err(ConfigError::Invalid("backend.endpoint is required for kind = \"remote\"".into()));
        }
        let inputs: [(&'static str, &Option<PathBuf>); 5] = [
            ("corpus.train", &self.corpus.train),
            ("corpus.dev", &self.corpus.dev),
            ("corpus.test", &self.corpus.test),
            ("corpus.ppo_prompts", &self.corpus.ppo_prompts),
            ("backend.few_shot_pool", &self.backend.few_shot_pool),
        ];
        for (field, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        field,
                        path: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// One cache file per backend model id, named after a sanitized id.
    pub fn cache_file(&self) -> PathBuf {
        self.cache_dir.join(format!("{}.jsonl", sanitize_model_id(&self.backend.model)))
    }
}

/// Replaces every character outside `[A-Za-z0-9._-]` with `_`.
pub fn sanitize_model_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "_".into()
    } else {
        s
    }
}

/// Reads, resolves (relative to the file's directory) and validates a
/// TOML run configuration.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut config = RunConfig::from_toml_str(&text, &path.display().to_string())?;
    config.resolve_paths(path.parent().unwrap_or(Path::new("")));
    config.validate()?;
    Ok(config)
}

/// Takes the already-resolved configuration recorded in a run manifest.
pub fn load_config_from_manifest(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: origin.clone(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    let config = value.get("config").cloned().ok_or_else(|| ConfigError::Parse {
        path: origin.clone(),
        message: "manifest has no \"config\" object".into(),
    })?;
    let config: RunConfig = serde_json::from_value(config).map_err(|e| ConfigError::Parse {
        path: origin,
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = RunConfig::from_toml_str("", "t").unwrap();
        assert_eq!(c.ppo.beta, 0.1);
        assert_eq!(c.ppo.clip_epsilon, 0.2);
        assert_eq!(c.prompt.shot_count, 6);
        assert_eq!(c.backend.kind, BackendKind::Scripted);
        c.validate().unwrap();
    }

    #[test]
    fn negative_beta_is_rejected() {
        let c = RunConfig::from_toml_str("[ppo]\nbeta = -1.0\n", "t").unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("beta must be ≥ 0"), "{e}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml_str("[ppo]\nbetaa = 0.2\n", "t").unwrap_err().to_string();
        assert!(e.contains("betaa"), "{e}");
        let e = RunConfig::from_toml_str("sed = 3\n", "t").unwrap_err().to_string();
        assert!(e.contains("sed"), "{e}");
    }

    #[test]
    fn remote_needs_endpoint() {
        let c = RunConfig::from_toml_str("[backend]\nkind = \"remote\"\nmodel = \"m\"\n", "t").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("endpoint"));
    }

    #[test]
    fn missing_input_path_is_reported() {
        let c = RunConfig::from_toml_str("[corpus]\ntrain = \"/definitely/not/here.jsonl\"\n", "t").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::MissingPath { field: "corpus.train", .. })));
    }

    #[test]
    fn model_ids_are_sanitized() {
        assert_eq!(sanitize_model_id("gpt-3.5-turbo"), "gpt-3.5-turbo");
        assert_eq!(sanitize_model_id("org/model:v1"), "org_model_v1");
        assert_eq!(sanitize_model_id(".."), "_");
        assert_eq!(sanitize_model_id(""), "_");
    }
}
