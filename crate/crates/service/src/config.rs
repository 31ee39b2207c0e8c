//! Engine configuration: TOML file, then environment, then CLI flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use memgraph::llm::{Schema, DEFAULT_RETRIES};
use memgraph::rag::RagConfig;
use memgraph::retrieval::DEFAULT_SESSION_EXPIRY_SECS;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const ENV_DATA_DIR: &str = "MEMGRAPH_DATA_DIR";
pub const ENV_PROVIDER: &str = "MEMGRAPH_PROVIDER";
pub const ENV_PORT: &str = "MEMGRAPH_PORT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

impl std::str::FromStr for ProviderKind {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(ProviderKind::Mock),
            "http" => Ok(ProviderKind::Http),
            other => Err(ApiError::validation(format!("unknown provider kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 30,
            retries: DEFAULT_RETRIES,
        }
    }
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    fn validate(&self, scope: &str) -> Result<(), ApiError> {
        if self.timeout_secs == 0 {
            return Err(ApiError::validation(format!("{scope}: timeout_secs must be positive")));
        }
        if self.kind == ProviderKind::Http {
            match self.endpoint.as_deref() {
                Some(e) if e.starts_with("http://") || e.starts_with("https://") => {}
                Some(e) => return Err(ApiError::validation(format!("{scope}: endpoint {e:?} is not an http(s) URL"))),
                None => return Err(ApiError::validation(format!("{scope}: http provider needs an endpoint"))),
            }
            if self.model.as_deref().is_none_or(|m| m.trim().is_empty()) {
                return Err(ApiError::validation(format!("{scope}: http provider needs a model")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// 0 asks the OS for a free port.
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".to_owned(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub session_expiry_secs: u64,
    pub provider: ProviderConfig,
    /// Per-schema overrides, keyed by schema name (e.g. "relevance-filter").
    pub providers: BTreeMap<Schema, ProviderConfig>,
    pub rag: RagConfig,
    pub server: ServerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("memgraph-data"),
            session_expiry_secs: DEFAULT_SESSION_EXPIRY_SECS as u64,
            provider: ProviderConfig::default(),
            providers: BTreeMap::new(),
            rag: RagConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(raw: &str) -> Result<Self, ApiError> {
        toml::from_str(raw).map_err(|e| ApiError::validation(format!("config: {e}")))
    }

    /// Reads `path` when given, otherwise starts from defaults, then applies
    /// the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ApiError> {
        let mut config = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| ApiError::validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&raw)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ApiError> {
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        if let Some(kind) = var(ENV_PROVIDER) {
            self.provider.kind = kind.parse()?;
        }
        if let Some(port) = var(ENV_PORT) {
            self.server.port = port
                .trim()
                .parse()
                .map_err(|_| ApiError::validation(format!("{ENV_PORT}={port:?} is not a port number")))?;
        }
        Ok(())
    }

    pub fn session_expiry(&self) -> chrono::TimeDelta {
        chrono::TimeDelta::seconds(self.session_expiry_secs.min(i64::MAX as u64) as i64)
    }

    pub fn provider_for(&self, schema: Schema) -> &ProviderConfig {
        self.providers.get(&schema).unwrap_or(&self.provider)
    }

    /// Checks every field and creates the data directory if needed.
    pub fn validate(&self) -> Result<(), ApiError> {
        self.provider.validate("provider")?;
        for (schema, p) in &self.providers {
            p.validate(&format!("providers.{schema}"))?;
        }
        self.rag.validate().map_err(ApiError::from)?;
        if self.session_expiry_secs == 0 {
            return Err(ApiError::validation("session_expiry_secs must be positive"));
        }
        if self.server.bind.trim().is_empty() {
            return Err(ApiError::validation("server.bind is empty"));
        }
        std::fs::create_dir_all(&self.data_dir).map_err(|e| {
            ApiError::validation(format!("data directory {} is not creatable: {e}", self.data_dir.display()))
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use memgraph::rag::Variant;

    #[test]
    fn parses_full_file() {
        let raw = r#"
            data_dir = "/tmp/mg"
            session_expiry_secs = 60

            [provider]
            kind = "http"
            endpoint = "http://127.0.0.1:9000/v1/chat/completions"
            model = "small"
            api_key_env = "MG_KEY"
            timeout_secs = 5
            retries = 1

            [providers."relevance-filter"]
            kind = "mock"

            [rag]
            variant = "v1"
            chunk_length = 128
            overlap = 32

            [server]
            port = 9999
        "#;
        let c = EngineConfig::from_toml(raw).unwrap();
        assert_eq!(c.provider.kind, ProviderKind::Http);
        assert_eq!(c.provider.api_key_env.as_deref(), Some("MG_KEY"));
        assert_eq!(c.provider_for(Schema::RelevanceFilter).kind, ProviderKind::Mock);
        assert_eq!(c.provider_for(Schema::SemanticExtraction).kind, ProviderKind::Http);
        assert_eq!(c.rag.variant, Variant::V1);
        assert_eq!(c.rag.top_k, RagConfig::default().top_k);
        assert_eq!(c.server.port, 9999);
        assert_eq!(c.server.bind, "127.0.0.1");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ports() {
        assert!(EngineConfig::from_toml("colour = 1").is_err());
        assert!(EngineConfig::from_toml("[server]\nport = 70000").is_err());
        let mut c = EngineConfig::default();
        let err = c
            .apply_env(|k| (k == ENV_PORT).then(|| "http".to_owned()))
            .unwrap_err();
        assert_eq!(err.code, crate::error::ErrorCode::ValidationFailed);
    }

    #[test]
    fn env_overrides_file() {
        let mut c = EngineConfig::from_toml("data_dir = \"a\"").unwrap();
        c.apply_env(|k| match k {
            ENV_DATA_DIR => Some("b".into()),
            ENV_PROVIDER => Some("HTTP".into()),
            ENV_PORT => Some("81".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.data_dir, PathBuf::from("b"));
        assert_eq!(c.provider.kind, ProviderKind::Http);
        assert_eq!(c.server.port, 81);
    }

    #[test]
    fn http_provider_needs_endpoint_and_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = EngineConfig {
            data_dir: dir.path().join("nested/data"),
            ..EngineConfig::default()
        };
        c.validate().unwrap();
        assert!(c.data_dir.is_dir());
        c.provider.kind = ProviderKind::Http;
        assert!(c.validate().is_err());
        c.provider.endpoint = Some("http://localhost:1/x".into());
        c.provider.model = Some("m".into());
        c.validate().unwrap();
        c.rag.overlap = c.rag.chunk_length;
        c.rag.variant = Variant::V1;
        assert!(c.validate().is_err());
    }
}
