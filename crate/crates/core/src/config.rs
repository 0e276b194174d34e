//! Run configuration and the runtime objects it describes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{
    generate_suite, preset_suite, sim_pool, sim_profiles, ExperimentConfig, SuiteConfig,
};
use crate::canonical::{sha256_hex, to_canonical_string};
use crate::embedding::{CachedEmbedder, Embedder, HashingEmbedder, DEFAULT_DIM};
use crate::evolution::{Assistant, Deps, HyperParams, PromptSet};
use crate::executor::{Evaluator, ExecOptions, TaskQuery};
use crate::genome::{ModelPool, ModelSpec};
use crate::provider::sim::{SimModelProfile, SimulatedBackend};
use crate::provider::{ChatBackend, ProviderError};
use crate::repo::OperatorRepo;

/// Environment variable holding the API key for HTTP backends.
pub const API_KEY_ENV: &str = "EVOFLOW_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Offline model pool; profiles default to the four-model preset.
    Simulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profiles: Option<Vec<SimModelProfile>>,
    },
    /// OpenAI-style chat endpoint.
    Http {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Simulated { profiles: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        endpoint: String,
        model: String,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashing { dim: DEFAULT_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pool: Vec<ModelSpec>,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
    pub params: HyperParams,
    /// Generated task stream; used when `dataset` is absent.
    pub suite: SuiteConfig,
    pub suite_seed: u64,
    /// Line-delimited task queries, resolved against the config's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Model that writes tags and offspring; deterministic operators if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assistant: Option<String>,
    pub seed: u64,
    /// Resolved against the config's directory.
    pub run_dir: PathBuf,
    pub run_id: String,
    /// Used by the `bench` command.
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pool: sim_pool().models().to_vec(),
            backend: BackendConfig::default(),
            embedding: EmbeddingConfig::default(),
            params: HyperParams::default(),
            suite: preset_suite(),
            suite_seed: 1,
            dataset: None,
            assistant: None,
            seed: 0,
            run_dir: PathBuf::from("run"),
            run_id: "main".into(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse and check a config; relative paths become relative to `base`.
    pub fn from_str_at(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.run_dir = base.join(&cfg.run_dir);
        cfg.dataset = cfg.dataset.map(|d| base.join(d));
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_str_at(&text, base)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.params
            .check()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pool = self.model_pool()?;
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "run_id `{}` must be nonempty [A-Za-z0-9_-]",
                self.run_id
            ));
        }
        if let Some(a) = &self.assistant {
            if !pool.contains(a) {
                return bad(format!("assistant model `{a}` is not in the pool"));
            }
        }
        if let BackendConfig::Simulated { profiles } = &self.backend {
            let profiles = profiles.clone().unwrap_or_else(sim_profiles);
            for id in pool.ids() {
                if !profiles.iter().any(|p| p.model_id == id) {
                    return bad(format!("pool model `{id}` has no simulated profile"));
                }
            }
            if let Some(p) = profiles.iter().find(|p| !p.is_valid()) {
                return bad(format!(
                    "profile `{}` has a probability outside [0,1]",
                    p.model_id
                ));
            }
        }
        if let EmbeddingConfig::Hashing { dim: 0 } = self.embedding {
            return bad("embedding dim must be positive".into());
        }
        if self.dataset.is_none() {
            if self.suite.tasks_per_domain == 0 {
                return bad("suite must have at least one task per domain".into());
            }
            generate_suite(&self.suite, self.suite_seed)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.experiment.checkpoint_every == 0 || self.experiment.probes_per_domain == 0 {
            return bad(
                "experiment checkpoint_every and probes_per_domain must be positive".into(),
            );
        }
        Ok(())
    }

    pub fn model_pool(&self) -> Result<ModelPool, ConfigError> {
        ModelPool::new(self.pool.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Hash of the canonical form without the run directory; a run refuses
    /// to resume under another config.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run_dir = PathBuf::new();
        sha256_hex(
            to_canonical_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// The query stream: the dataset file if given, else the generated suite.
    pub fn tasks(&self) -> Result<Vec<TaskQuery>, ConfigError> {
        let tasks = match &self.dataset {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .enumerate()
                    .map(|(i, l)| {
                        serde_json::from_str(l).map_err(|e| {
                            ConfigError::Invalid(format!("{}:{}: {e}", path.display(), i + 1))
                        })
                    })
                    .collect::<Result<Vec<TaskQuery>, _>>()?
            }
            None => {
                generate_suite(&self.suite, self.suite_seed)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?
                    .tasks
            }
        };
        if tasks.is_empty() {
            return Err(ConfigError::Invalid("task stream is empty".into()));
        }
        Ok(tasks)
    }

    /// Domain labels used to tag the initial population.
    pub fn domains(&self, tasks: &[TaskQuery]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in tasks {
            if !out.contains(&t.domain) {
                out.push(t.domain.clone());
            }
        }
        out
    }
}

/// Owned runtime objects a command needs.
pub struct Runtime {
    pub params: HyperParams,
    pub pool: ModelPool,
    pub repo: OperatorRepo,
    pub backend: Box<dyn ChatBackend>,
    pub embedder: Box<dyn Embedder>,
    pub evaluator: Evaluator,
    pub exec: ExecOptions,
    pub assistant: Option<Assistant>,
}

impl Runtime {
    /// Build the runtime; `seed` seeds a simulated backend.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self, RuntimeError> {
        let pool = cfg.model_pool()?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        let backend: Box<dyn ChatBackend> = match &cfg.backend {
            BackendConfig::Simulated { profiles } => Box::new(SimulatedBackend::new(
                seed,
                profiles.clone().unwrap_or_else(sim_profiles),
            )?),
            BackendConfig::Http {
                endpoint,
                timeout_secs,
            } => http_backend(endpoint, *timeout_secs, api_key.clone(), &pool)?,
        };
        let embedder: Box<dyn Embedder> = match &cfg.embedding {
            EmbeddingConfig::Hashing { dim } => {
                Box::new(CachedEmbedder::new(HashingEmbedder::new(*dim)))
            }
            EmbeddingConfig::Remote { endpoint, model } => {
                remote_embedder(endpoint, model, api_key)?
            }
        };
        Ok(Self {
            params: cfg.params.clone(),
            pool,
            repo: OperatorRepo::standard(),
            backend,
            embedder,
            evaluator: Evaluator::default(),
            exec: ExecOptions {
                call_budget: cfg.params.call_budget,
                ..ExecOptions::default()
            },
            assistant: cfg.assistant.clone().map(|model_id| Assistant {
                model_id,
                prompts: PromptSet::default(),
            }),
        })
    }

    pub fn deps<'a>(&'a self, trace_dir: Option<&'a Path>) -> Deps<'a> {
        Deps {
            params: &self.params,
            pool: &self.pool,
            repo: &self.repo,
            backend: self.backend.as_ref(),
            embedder: self.embedder.as_ref(),
            evaluator: &self.evaluator,
            exec: &self.exec,
            assistant: self.assistant.as_ref(),
            trace_dir,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[cfg(feature = "http")]
fn http_backend(
    endpoint: &str,
    timeout_secs: u64,
    api_key: Option<String>,
    pool: &ModelPool,
) -> Result<Box<dyn ChatBackend>, RuntimeError> {
    use crate::provider::http::HttpChatBackend;
    use crate::provider::transport::UreqTransport;
    let transport = UreqTransport::new(std::time::Duration::from_secs(timeout_secs));
    Ok(Box::new(
        HttpChatBackend::new(endpoint, api_key, transport).with_known_models(pool.ids()),
    ))
}

#[cfg(not(feature = "http"))]
fn http_backend(
    _: &str,
    _: u64,
    _: Option<String>,
    _: &ModelPool,
) -> Result<Box<dyn ChatBackend>, RuntimeError> {
    Err(ConfigError::Invalid("built without the `http` feature".into()).into())
}

#[cfg(feature = "http")]
fn remote_embedder(
    endpoint: &str,
    model: &str,
    api_key: Option<String>,
) -> Result<Box<dyn Embedder>, RuntimeError> {
    use crate::embedding::RemoteEmbedder;
    use crate::provider::transport::UreqTransport;
    Ok(Box::new(CachedEmbedder::new(RemoteEmbedder::new(
        endpoint,
        model,
        api_key,
        UreqTransport::default(),
    ))))
}

#[cfg(not(feature = "http"))]
fn remote_embedder(_: &str, _: &str, _: Option<String>) -> Result<Box<dyn Embedder>, RuntimeError> {
    Err(ConfigError::Invalid("built without the `http` feature".into()).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = RunConfig::from_str_at("{}", Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.params, HyperParams::default());
        assert_eq!(cfg.run_dir, Path::new("/tmp/x/run"));
        assert_eq!(cfg.params.n, 15);
    }

    #[test]
    fn bad_params_are_rejected() {
        let err = RunConfig::from_str_at(r#"{"params":{"k":0}}"#, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("parent count"), "{err}");
        assert!(RunConfig::from_str_at(r#"{"bogus":1}"#, Path::new(".")).is_err());
        assert!(RunConfig::from_str_at(r#"{"assistant":"nope"}"#, Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
    }
}
