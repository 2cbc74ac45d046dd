//! Flat `key = value` configuration with environment overrides.
//!
//! Environment variables named `CIS_` + the key upper-cased with dots turned
//! into underscores (`dispatch.timeout_ms` -> `CIS_DISPATCH_TIMEOUT_MS`)
//! override file values. Lists are comma-separated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dispatch::{DispatchConfig, SelectionPolicy};
use crate::retrieval::RetrievalConfig;

pub const ENV_PREFIX: &str = "CIS_";
pub const DEFAULT_RECENT_K: usize = 10;
pub const DEFAULT_ATTACHMENT_CAP: usize = 8 * 1024 * 1024;
pub const DEFAULT_WOZ_QUEUE_CAP: usize = 32;
pub const DEFAULT_CLIENT_TIMEOUT_MS: u64 = 1000;

const KEYS: &[&str] = &[
    "store.path",
    "store.recent_k",
    "dispatch.timeout_ms",
    "dispatch.policy",
    "dispatch.priority",
    "dispatch.fallback_text",
    "retrieval.k",
    "retrieval.rerank_depth",
    "retrieval.proximity_boost",
    "retrieval.context_weight",
    "retrieval.qa_docs",
    "retrieval.snippet_chars",
    "clients.web.mode",
    "clients.web.endpoint",
    "clients.web.credential_env",
    "clients.web.fixtures",
    "clients.web.timeout_ms",
    "clients.speech.mode",
    "clients.speech.endpoint",
    "gateway.woz_queue_cap",
    "attachments.dir",
    "attachments.max_bytes",
    "batch.run_name",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("reading config: {0}")]
    Io(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientMode {
    #[default]
    Stub,
    Live,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WebClientSettings {
    /// `None` when no web action should be registered.
    pub mode: Option<ClientMode>,
    pub endpoint: Option<String>,
    pub credential_env: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeechSettings {
    pub mode: ClientMode,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub store_path: Option<PathBuf>,
    pub recent_k: usize,
    pub dispatch: DispatchConfig,
    pub retrieval: RetrievalConfig,
    pub web: WebClientSettings,
    pub speech: SpeechSettings,
    pub woz_queue_cap: usize,
    pub attachments_dir: Option<PathBuf>,
    pub attachments_max_bytes: usize,
    pub run_name: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            store_path: None,
            recent_k: DEFAULT_RECENT_K,
            dispatch: DispatchConfig::default(),
            retrieval: RetrievalConfig::default(),
            web: WebClientSettings {
                timeout_ms: DEFAULT_CLIENT_TIMEOUT_MS,
                ..WebClientSettings::default()
            },
            speech: SpeechSettings::default(),
            woz_queue_cap: DEFAULT_WOZ_QUEUE_CAP,
            attachments_dir: None,
            attachments_max_bytes: DEFAULT_ATTACHMENT_CAP,
            run_name: "cis".into(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| invalid(key, format!("not a number: {v}")))
}

fn parse_mode(key: &str, v: &str) -> Result<ClientMode, ConfigError> {
    match v {
        "stub" => Ok(ClientMode::Stub),
        "live" => Ok(ClientMode::Live),
        _ => Err(invalid(key, "expected stub or live")),
    }
}

fn non_empty(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_string())
}

impl Settings {
    /// Loads the optional file, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_sources(&text, std::env::vars())
    }

    pub fn from_sources<I>(file_text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut pairs = parse_pairs(file_text)?;
        if let Some(k) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let env: BTreeMap<String, String> = env.into_iter().collect();
        for key in KEYS {
            if let Some(v) = env.get(&env_name(key)) {
                pairs.insert(key.to_string(), v.clone());
            }
        }
        let mut s = Settings::default();
        for (key, v) in &pairs {
            let key = key.as_str();
            match key {
                "store.path" => s.store_path = non_empty(v).map(PathBuf::from),
                "store.recent_k" => s.recent_k = parse_num(key, v)?,
                "dispatch.timeout_ms" => s.dispatch.timeout_ms = parse_num(key, v)?,
                "dispatch.policy" => {
                    s.dispatch.selection_policy = SelectionPolicy::parse(v)
                        .ok_or_else(|| invalid(key, "expected max_confidence, priority or combine"))?
                }
                "dispatch.priority" => {
                    s.dispatch.action_priority = v
                        .split(',')
                        .map(str::trim)
                        .filter(|x| !x.is_empty())
                        .map(String::from)
                        .collect()
                }
                "dispatch.fallback_text" => s.dispatch.fallback_text = v.clone(),
                "retrieval.k" => s.retrieval.k = parse_num(key, v)?,
                "retrieval.rerank_depth" => s.retrieval.rerank_depth = parse_num(key, v)?,
                "retrieval.proximity_boost" => s.retrieval.proximity_boost = parse_num(key, v)?,
                "retrieval.context_weight" => s.retrieval.context_weight = parse_num(key, v)?,
                "retrieval.qa_docs" => s.retrieval.qa_docs = parse_num(key, v)?,
                "retrieval.snippet_chars" => s.retrieval.snippet_chars = parse_num(key, v)?,
                "clients.web.mode" => s.web.mode = Some(parse_mode(key, v)?),
                "clients.web.endpoint" => s.web.endpoint = non_empty(v),
                "clients.web.credential_env" => s.web.credential_env = non_empty(v),
                "clients.web.fixtures" => s.web.fixtures = non_empty(v).map(PathBuf::from),
                "clients.web.timeout_ms" => s.web.timeout_ms = parse_num(key, v)?,
                "clients.speech.mode" => s.speech.mode = parse_mode(key, v)?,
                "clients.speech.endpoint" => s.speech.endpoint = non_empty(v),
                "gateway.woz_queue_cap" => s.woz_queue_cap = parse_num(key, v)?,
                "attachments.dir" => s.attachments_dir = non_empty(v).map(PathBuf::from),
                "attachments.max_bytes" => s.attachments_max_bytes = parse_num(key, v)?,
                "batch.run_name" => s.run_name = v.clone(),
                _ => unreachable!("keys checked above"),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.recent_k == 0 {
            return Err(invalid("store.recent_k", "must be positive"));
        }
        self.dispatch
            .validate()
            .map_err(|e| invalid("dispatch", e.to_string()))?;
        self.retrieval
            .validate()
            .map_err(|e| invalid("retrieval", e))?;
        if self.web.mode.is_some() && self.web.timeout_ms >= self.dispatch.timeout_ms {
            return Err(invalid(
                "clients.web.timeout_ms",
                "must be below dispatch.timeout_ms",
            ));
        }
        if self.web.mode == Some(ClientMode::Live) && self.web.endpoint.is_none() {
            return Err(invalid("clients.web.endpoint", "required in live mode"));
        }
        if self.web.mode == Some(ClientMode::Stub) && self.web.fixtures.is_none() {
            return Err(invalid("clients.web.fixtures", "required in stub mode"));
        }
        if self.speech.mode == ClientMode::Live && self.speech.endpoint.is_none() {
            return Err(invalid("clients.speech.endpoint", "required in live mode"));
        }
        if self.run_name.is_empty() || self.run_name.contains(char::is_whitespace) {
            return Err(invalid("batch.run_name", "must be a single non-empty word"));
        }
        Ok(())
    }
}
