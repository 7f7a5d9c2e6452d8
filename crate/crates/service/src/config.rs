//! Server configuration file. The grammar is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use echo_core::engine::{Arms, EngineParams};
use echo_core::selector::SelectionMode;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Environment variable that replaces `data_dir`.
pub const DATA_DIR_ENV: &str = "ECHO_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub registry: PathBuf,
    pub catalog: PathBuf,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub k: usize,
    pub question_count: usize,
    pub min_read_seconds: f64,
    pub gate_threshold: f64,
    pub display_threshold: f64,
    pub merge_window_ms: u64,
    pub reward_window_ms: u64,
    pub feature_learning_rate: f64,
    pub selector_learning_rate: f64,
    pub dim: usize,
    pub embed_dim: usize,
    pub mode: SelectionMode,
    pub audit: bool,
    pub arms: Arms,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let p = EngineParams::default();
        EngineConfig {
            registry: PathBuf::from("registry.jsonl"),
            catalog: PathBuf::from("catalog.jsonl"),
            data_dir: PathBuf::from("data"),
            seed: p.seed,
            k: p.k,
            question_count: p.survey.question_count,
            min_read_seconds: p.survey.min_read_seconds,
            gate_threshold: p.filter.gate_threshold,
            display_threshold: p.display_threshold,
            merge_window_ms: p.merge_window_ms,
            reward_window_ms: p.reward_window_ms,
            feature_learning_rate: p.feature_learning_rate,
            selector_learning_rate: p.selector_learning_rate,
            dim: p.dim,
            embed_dim: p.embed_dim,
            mode: p.mode,
            audit: p.audit,
            arms: p.arms,
        }
    }
}

impl EngineConfig {
    /// Parses and validates; relative paths stay relative.
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and applies
    /// the `ECHO_DATA_DIR` override.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| ServiceError::Config(format!("{}: {}", path.display(), e.detail())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.registry = base.join(&cfg.registry);
        cfg.catalog = base.join(&cfg.catalog);
        cfg.data_dir = match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => base.join(&cfg.data_dir),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        for (field, p) in [("registry", &self.registry), ("catalog", &self.catalog), ("data_dir", &self.data_dir)] {
            if p.as_os_str().is_empty() {
                return Err(ServiceError::Config(format!("{field}: must not be empty")));
            }
        }
        self.engine_params()
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn engine_params(&self) -> EngineParams {
        let mut p = EngineParams {
            seed: self.seed,
            dim: self.dim,
            embed_dim: self.embed_dim,
            k: self.k,
            mode: self.mode,
            feature_learning_rate: self.feature_learning_rate,
            selector_learning_rate: self.selector_learning_rate,
            display_threshold: self.display_threshold,
            merge_window_ms: self.merge_window_ms,
            reward_window_ms: self.reward_window_ms,
            arms: self.arms,
            audit: self.audit,
            ..EngineParams::default()
        }
        .with_question_count(self.question_count);
        p.survey.min_read_seconds = self.min_read_seconds;
        p.filter.gate_threshold = self.gate_threshold;
        p
    }
}
