use curate_core::label::EmbedderConfig;
use curate_core::llm::{HttpChatProvider, LlmProvider, LlmProviderConfig};
use curate_core::prompts::{BatchConfig, MockProvider, MockSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSetting {
    Mock {
        #[serde(default)]
        spec: MockSpec,
    },
    Http(LlmProviderConfig),
}

impl Default for ProviderSetting {
    fn default() -> Self {
        ProviderSetting::Mock {
            spec: MockSpec::default(),
        }
    }
}

impl ProviderSetting {
    pub fn build(&self) -> Arc<dyn LlmProvider> {
        match self {
            ProviderSetting::Mock { spec } => Arc::new(MockProvider::new(spec.clone())),
            ProviderSetting::Http(cfg) => Arc::new(HttpChatProvider::new(cfg.clone())),
        }
    }

    pub fn batch_config(&self) -> BatchConfig {
        match self {
            ProviderSetting::Mock { .. } => BatchConfig::default(),
            ProviderSetting::Http(cfg) => BatchConfig::from(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Session logs and uploaded corpora live here.
    pub data_dir: PathBuf,
    /// Optional directory of prepared corpora, one sub-directory each.
    pub corpus_dir: Option<PathBuf>,
    pub provider: ProviderSetting,
    pub embedder: EmbedderConfig,
    pub seed: u64,
    pub test_size: usize,
    pub label_batch_size: usize,
    /// Active seconds after which a condition is flagged `over_time`.
    pub time_limit_secs: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            corpus_dir: None,
            provider: ProviderSetting::default(),
            embedder: EmbedderConfig::default(),
            seed: 0,
            test_size: 100,
            label_batch_size: 10,
            time_limit_secs: 900,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.test_size == 0 {
            return Err("test_size must be at least 1".into());
        }
        if self.label_batch_size == 0 {
            return Err("label_batch_size must be at least 1".into());
        }
        if let ProviderSetting::Http(cfg) = &self.provider {
            cfg.validate()?;
        }
        Ok(())
    }
}
