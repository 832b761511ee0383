//! Server configuration: a TOML file, then `SOLA_*` environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "/var/lib/sola"
//! secrets_dir = "/var/lib/sola/secrets"   # optional
//! session_ttl_minutes = 4320
//! cors_origins = ["https://village.example"]
//!
//! [[verifiers]]
//! id = "wallet"
//! program = "/usr/local/bin/check-wallet"
//! args = ["--chain", "main"]
//! ```
//!
//! Every top-level key can be overridden by the upper-cased variable with a
//! `SOLA_` prefix; `SOLA_CORS_ORIGINS` takes a comma-separated list.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sola_core::access::{SubprocessVerifier, VerifierRegistry};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierConfig {
    pub id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Where per-community signing secrets live; `<data_dir>/secrets` when unset.
    pub secrets_dir: Option<PathBuf>,
    pub session_ttl_minutes: u32,
    /// Allowed browser origins. Empty disables cross-origin access; `*`
    /// allows any origin.
    pub cors_origins: Vec<String>,
    pub verifiers: Vec<VerifierConfig>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("sola-data"),
            secrets_dir: None,
            session_ttl_minutes: 72 * 60,
            cors_origins: Vec::new(),
            verifiers: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {key}: {message}")]
    Env { key: String, message: String },
}

impl ApiConfig {
    /// Reads `path` (if given) and applies overrides from `env`.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.to_path_buf(), source: e })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(env)?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(ConfigError::Parse)
    }

    pub fn apply_env(&mut self, env: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        fn bad(key: &str, e: impl std::fmt::Display) -> ConfigError {
            ConfigError::Env { key: key.to_string(), message: e.to_string() }
        }
        for (key, value) in env {
            match key.as_str() {
                "SOLA_LISTEN" => self.listen = value.parse().map_err(|e| bad(&key, e))?,
                "SOLA_DATA_DIR" => self.data_dir = PathBuf::from(value),
                "SOLA_SECRETS_DIR" => self.secrets_dir = Some(PathBuf::from(value)),
                "SOLA_SESSION_TTL_MINUTES" => self.session_ttl_minutes = value.parse().map_err(|e| bad(&key, e))?,
                "SOLA_CORS_ORIGINS" => {
                    self.cors_origins =
                        value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn session_ttl(&self) -> Duration {
        Duration::minutes(i64::from(self.session_ttl_minutes))
    }

    pub fn secrets_path(&self) -> PathBuf {
        self.secrets_dir.clone().unwrap_or_else(|| self.data_dir.join("secrets"))
    }

    /// The mock verifier plus every configured subprocess verifier.
    pub fn verifier_registry(&self) -> VerifierRegistry {
        let mut reg = VerifierRegistry::with_defaults();
        for v in &self.verifiers {
            reg.register(v.id.clone(), SubprocessVerifier { program: v.program.clone(), args: v.args.clone() });
        }
        reg
    }
}
