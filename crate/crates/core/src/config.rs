//! Workspace configuration: a TOML file with one section per pipeline stage,
//! scalar keys overridable through `HYBRIDRAG_<SECTION>_<KEY>` variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chunk::TreeParams;
use crate::gateway::{ProviderConfig, ProviderKind};
use crate::keywords::KeywordScale;
use crate::prompts;
use crate::qagen::QaGenConfig;
use crate::router::RouterConfig;

pub const CONFIG_FILE: &str = "hybridrag.toml";
pub const ENV_PREFIX: &str = "HYBRIDRAG_";
/// Read by the command line itself, never a config key.
pub const WORKSPACE_ENV: &str = "HYBRIDRAG_WORKSPACE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("environment override {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    pub chat: ProviderConfig,
    pub embed: ProviderConfig,
    /// Answers Generated-route queries; defaults to `chat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<ProviderConfig>,
    /// Scores QA quality; defaults to `chat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<ProviderConfig>,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            chat: ProviderConfig::mock_chat(0),
            embed: ProviderConfig::mock_embed(0),
            generator: None,
            judge: None,
        }
    }
}

impl ProvidersConfig {
    pub fn generator(&self) -> &ProviderConfig {
        self.generator.as_ref().unwrap_or(&self.chat)
    }

    pub fn judge(&self) -> &ProviderConfig {
        self.judge.as_ref().unwrap_or(&self.chat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichConfig {
    pub temperature: f32,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self { temperature: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub target_tokens: usize,
    pub fan_out: usize,
    pub temperature: f32,
    pub summary_max_tokens: u32,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        let t = TreeParams::default();
        Self {
            target_tokens: 1024,
            fan_out: t.fan_out,
            temperature: t.temperature,
            summary_max_tokens: t.summary_max_tokens,
        }
    }
}

impl ChunkingConfig {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            fan_out: self.fan_out,
            temperature: self.temperature,
            summary_max_tokens: self.summary_max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordsConfig {
    pub base: u32,
    pub step: u32,
    pub cap: u32,
    pub temperature: f32,
}

impl Default for KeywordsConfig {
    fn default() -> Self {
        let s = KeywordScale::default();
        Self {
            base: s.base,
            step: s.step,
            cap: s.cap,
            temperature: 0.2,
        }
    }
}

impl KeywordsConfig {
    pub fn scale(&self) -> KeywordScale {
        KeywordScale {
            base: self.base,
            step: self.step,
            cap: self.cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub batch_size: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub judge_temperature: f32,
    /// Quality-only mode: queries run concurrently, latency is not reported.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            judge_temperature: 0.0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    /// Static files served under `/ui/`; relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub providers: ProvidersConfig,
    pub enrich: EnrichConfig,
    pub chunking: ChunkingConfig,
    pub keywords: KeywordsConfig,
    pub qa: QaGenConfig,
    pub index: IndexConfig,
    pub router: RouterConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
    /// Directory relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Applies `HYBRIDRAG_*` overrides from `vars` to keys present in the
    /// config, converting each value to the type of the key it replaces.
    pub fn with_env<I>(self, vars: I) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let base_dir = self.base_dir.clone();
        let mut value = toml::Value::try_from(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut touched = false;
        for (var, raw) in vars {
            let Some(path) = var.strip_prefix(ENV_PREFIX).filter(|_| var != WORKSPACE_ENV) else {
                continue;
            };
            let env_err = |reason: String| ConfigError::Env {
                var: var.clone(),
                reason,
            };
            let slot = find_slot(&mut value, &path.to_ascii_lowercase())
                .ok_or_else(|| env_err("no such scalar key".into()))?;
            *slot = convert_like(slot, &raw).map_err(env_err)?;
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        let mut c: Config = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        c.base_dir = base_dir;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.chunking.target_tokens == 0 {
            return invalid("chunking.target_tokens must be > 0".into());
        }
        if self.chunking.fan_out < 2 {
            return invalid("chunking.fan_out must be >= 2".into());
        }
        self.keywords
            .scale()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("keywords: {e}")))?;
        self.router
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("router: {e}")))?;
        if self.index.batch_size == 0 {
            return invalid("index.batch_size must be > 0".into());
        }
        Ok(())
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    /// Cumulative per-stage hashes: each stage's hash covers its own settings
    /// and prompts plus the hash of the stage it reads from.
    pub fn stage_hashes(&self) -> StageHashes {
        let p = prompts::prompt_hashes();
        let enrich = hash_json(&json!({
            "chat": self.provider_identity(&self.providers.chat),
            "enrich": self.enrich,
            "prompt": p["describe"],
        }));
        let chunk = hash_json(&json!({
            "upstream": enrich,
            "chat": self.provider_identity(&self.providers.chat),
            "chunking": self.chunking,
            "prompt": p["summarize"],
        }));
        let genqa = hash_json(&json!({
            "upstream": chunk,
            "chat": self.provider_identity(&self.providers.chat),
            "keywords": self.keywords,
            "qa": self.qa,
            "prompts": [&p["keywords"], &p["qa_generation"], &p["qa_generation_system"], &p["qa_fewshot"]],
        }));
        let index = hash_json(&json!({
            "upstream": genqa,
            "embed": self.provider_identity(&self.providers.embed),
        }));
        StageHashes {
            enrich,
            chunk,
            genqa,
            index,
        }
    }

    /// Provider settings that influence outputs; transport knobs and mock
    /// delays are left out, mock script contents are folded in.
    fn provider_identity(&self, p: &ProviderConfig) -> serde_json::Value {
        let script = match (&p.kind, &p.script_path) {
            (ProviderKind::MockChat, Some(s)) => std::fs::read(self.resolve(s))
                .map(|b| prompts::sha256_hex(&String::from_utf8_lossy(&b)))
                .unwrap_or_else(|_| format!("unreadable:{s}")),
            _ => String::new(),
        };
        json!({
            "kind": p.kind,
            "base_url": p.base_url,
            "model": p.model,
            "seed": p.seed,
            "dim": p.dim,
            "script": script,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub enrich: String,
    pub chunk: String,
    pub genqa: String,
    pub index: String,
}

impl StageHashes {
    pub fn as_map(&self) -> BTreeMap<&'static str, &str> {
        [
            ("enrich", self.enrich.as_str()),
            ("chunk", self.chunk.as_str()),
            ("genqa", self.genqa.as_str()),
            ("index", self.index.as_str()),
        ]
        .into()
    }
}

fn hash_json(v: &serde_json::Value) -> String {
    prompts::sha256_hex(&v.to_string())
}

/// Walks tables matching underscore-joined key prefixes, e.g.
/// `providers_chat_seed` → `providers.chat.seed`, `chunking_fan_out` →
/// `chunking.fan_out`.
fn find_slot<'a>(value: &'a mut toml::Value, path: &str) -> Option<&'a mut toml::Value> {
    let table = match value {
        toml::Value::Table(t) => t,
        _ => return None,
    };
    let key = table
        .keys()
        .filter(|k| path == k.as_str() || path.starts_with(&format!("{k}_")))
        .max_by_key(|k| k.len())?
        .clone();
    let child = table.get_mut(&key)?;
    if path == key {
        return match child {
            toml::Value::Table(_) | toml::Value::Array(_) => None,
            scalar => Some(scalar),
        };
    }
    find_slot(child, &path[key.len() + 1..])
}

fn convert_like(existing: &toml::Value, raw: &str) -> Result<toml::Value, String> {
    let bad = |kind: &str| format!("{raw:?} is not a valid {kind}");
    Ok(match existing {
        toml::Value::String(_) => toml::Value::String(raw.to_string()),
        toml::Value::Integer(_) => toml::Value::Integer(raw.trim().parse().map_err(|_| bad("integer"))?),
        toml::Value::Float(_) => toml::Value::Float(raw.trim().parse().map_err(|_| bad("float"))?),
        toml::Value::Boolean(_) => toml::Value::Boolean(raw.trim().parse().map_err(|_| bad("boolean"))?),
        _ => return Err("only scalar keys can be overridden".into()),
    })
}
