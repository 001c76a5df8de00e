//! Deployment configuration, read from TOML (or JSON when the file ends in
//! `.json`). Every field has a default so an empty file is valid and runs
//! fully offline against an empty script.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consult::{fraction_from_decimal, ConsultDeps, ExtractionMode, Thresholds};
use crate::corpus::Corpus;
use crate::gateway::{Gateway, ProviderConfig, Script, ScriptedBackend};
use crate::scenario::{Disclaimer, InstructionSource, PolicyBook, ScenarioId};
use crate::tools::{EndpointConfig, KdbClient, ToolRegistry, TongueClient, DEFAULT_MAX_IMAGE_BYTES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    /// Scripted-provider file. Takes precedence over `endpoint`.
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub context_budget_chars: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self { context_budget_chars: crate::gateway::DEFAULT_CONTEXT_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolEndpoint {
    pub endpoint: String,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub retries: Option<u32>,
    /// Tongue classifier only.
    #[serde(default)]
    pub max_image_bytes: Option<usize>,
}

impl ToolEndpoint {
    fn endpoint_config(&self) -> EndpointConfig {
        let mut c = EndpointConfig::new(&self.endpoint);
        if let Some(t) = self.timeout_ms {
            c.timeout_ms = t;
        }
        if let Some(r) = self.retries {
            c.retries = r;
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    pub tongue: Option<ToolEndpoint>,
    pub kdb: Option<ToolEndpoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Directory written by `ingest`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsultSection {
    pub coverage_threshold: f64,
    pub gain_threshold: f64,
    pub question_budget: u8,
    pub switch_threshold: f64,
    pub extraction: ExtractionMode,
    pub llm_routing: bool,
}

impl Default for ConsultSection {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.8,
            gain_threshold: 0.1,
            question_budget: 3,
            switch_threshold: crate::scenario::DEFAULT_SWITCH_THRESHOLD,
            extraction: ExtractionMode::Model,
            llm_routing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSection {
    pub data_dir: PathBuf,
    /// Write a session snapshot after every this many steps.
    pub snapshot_every: u32,
}

impl Default for StorageSection {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("var"), snapshot_every: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub categories: Option<Vec<String>>,
    pub parallel: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderSection,
    pub prompt: PromptSection,
    pub tools: ToolsSection,
    pub corpus: CorpusSection,
    pub consult: ConsultSection,
    pub disclaimers: BTreeMap<ScenarioId, Disclaimer>,
    pub storage: StorageSection,
    pub eval: EvalSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let parse = |message: String| ConfigError::Parse { path: path.display().to_string(), message };
        let mut cfg: AppConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse(e.to_string()))?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.provider.script.as_mut() {
            fix(p);
        }
        if let Some(p) = self.corpus.dir.as_mut() {
            fix(p);
        }
        fix(&mut self.storage.data_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.consult;
        for (name, v) in [("coverage_threshold", c.coverage_threshold), ("gain_threshold", c.gain_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("consult.{name} must lie in [0, 1]")));
            }
        }
        if !(1..=5).contains(&c.question_budget) {
            return Err(ConfigError::Invalid("consult.question_budget must be between 1 and 5".into()));
        }
        if self.provider.script.is_none() && self.provider.endpoint.is_some() && self.provider.model.is_none() {
            return Err(ConfigError::Invalid("provider.model is required with provider.endpoint".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Result<Thresholds, ConfigError> {
        Ok(Thresholds {
            coverage: fraction_from_decimal(self.consult.coverage_threshold).map_err(ConfigError::Invalid)?,
            gain: fraction_from_decimal(self.consult.gain_threshold).map_err(ConfigError::Invalid)?,
        })
    }

    /// Scripted gateway when `provider.script` is set or no endpoint is
    /// configured, HTTP otherwise.
    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let p = &self.provider;
        if let Some(path) = &p.script {
            let backend = ScriptedBackend::load(path).map_err(ConfigError::Invalid)?;
            return Ok(Gateway::scripted(Arc::new(backend)));
        }
        let Some(endpoint) = &p.endpoint else {
            return Ok(Gateway::scripted(Arc::new(ScriptedBackend::new(Script::default()))));
        };
        let mut cfg = ProviderConfig::new(endpoint, p.model.clone().unwrap_or_default());
        if let Some(t) = p.timeout_ms {
            cfg.timeout_ms = t;
        }
        if let Some(r) = p.max_retries {
            cfg.max_retries = r;
        }
        if let Some(t) = p.temperature {
            cfg.temperature = t;
        }
        cfg.api_key_env = p.api_key_env.clone();
        Gateway::http(cfg).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn corpus(&self) -> Result<Option<Arc<Corpus>>, ConfigError> {
        match &self.corpus.dir {
            None => Ok(None),
            Some(dir) => Corpus::load(dir).map(|c| Some(Arc::new(c))).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn tools(&self, corpus: Option<Arc<Corpus>>) -> ToolRegistry {
        let tongue = self.tools.tongue.as_ref().map(|t| {
            TongueClient::new(t.endpoint_config()).with_max_bytes(t.max_image_bytes.unwrap_or(DEFAULT_MAX_IMAGE_BYTES))
        });
        let kdb = self.tools.kdb.as_ref().map(|t| KdbClient::new(t.endpoint_config()));
        ToolRegistry::new(tongue, kdb, corpus)
    }

    /// Policies with configured disclaimers and question budget, reading
    /// instructions from `instructions`.
    pub fn policies(&self, instructions: Arc<dyn InstructionSource>) -> PolicyBook {
        let mut book = PolicyBook::with_instructions(instructions);
        book.set_question_budget(self.consult.question_budget);
        for (s, d) in &self.disclaimers {
            book.set_disclaimer(*s, d.clone());
        }
        book
    }

    /// Wires every consultation dependency from this configuration.
    pub fn consult_deps(&self, gateway: Gateway, instructions: Arc<dyn InstructionSource>) -> Result<ConsultDeps, ConfigError> {
        let corpus = self.corpus()?;
        let mut deps = ConsultDeps::new(gateway);
        deps.tools = Arc::new(self.tools(corpus.clone()));
        deps.corpus = corpus;
        deps.policies = self.policies(instructions);
        deps.thresholds = self.thresholds()?;
        deps.switch_threshold = self.consult.switch_threshold;
        deps.context_budget = self.prompt.context_budget_chars;
        deps.extraction = self.consult.extraction;
        deps.llm_routing = self.consult.llm_routing;
        Ok(deps)
    }
}
