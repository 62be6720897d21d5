//! Server configuration: one TOML file, every key overridable from the
//! environment with a `CM_` prefix (`CM_BIND`, `CM_LOG_PATH`, ...).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use caremesh_core::{Clock, Durability, LogOptions};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {value:?}")]
    Env { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    System,
    Logical,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: SocketAddr,
    pub log_path: PathBuf,
    pub token_file: PathBuf,
    pub heartbeat_secs: u64,
    /// `false` trades crash durability for append speed (flush only).
    pub fsync: bool,
    /// `logical` stamps every record with 0 so two runs of the same script
    /// write identical bytes.
    pub clock: ClockMode,
    /// Per-stream buffer; a consumer that falls this far behind is cut off.
    pub stream_buffer: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            log_path: PathBuf::from("caremesh.log"),
            token_file: PathBuf::from("tokens.json"),
            heartbeat_secs: 15,
            fsync: true,
            clock: ClockMode::System,
            stream_buffer: caremesh_core::mailbox::DEFAULT_STREAM_BUFFER,
        }
    }
}

impl Config {
    /// Reads `path` (defaults if `None`) and applies `CM_*` variables from
    /// the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => Config::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix("CM_") else {
                continue;
            };
            let bad = || ConfigError::Env {
                key: key.clone(),
                value: value.clone(),
            };
            match name {
                "BIND" => self.bind = value.parse().map_err(|_| bad())?,
                "LOG_PATH" => self.log_path = PathBuf::from(&value),
                "TOKEN_FILE" => self.token_file = PathBuf::from(&value),
                "HEARTBEAT_SECS" => self.heartbeat_secs = value.parse().map_err(|_| bad())?,
                "FSYNC" => self.fsync = value.parse().map_err(|_| bad())?,
                "CLOCK" => {
                    self.clock = match value.as_str() {
                        "system" => ClockMode::System,
                        "logical" => ClockMode::Logical,
                        _ => return Err(bad()),
                    }
                }
                "STREAM_BUFFER" => self.stream_buffer = value.parse().map_err(|_| bad())?,
                _ => tracing::debug!(%key, "ignoring unknown CM_ variable"),
            }
        }
        Ok(())
    }

    pub fn log_options(&self) -> LogOptions {
        LogOptions {
            clock: match self.clock {
                ClockMode::System => Clock::System,
                ClockMode::Logical => Clock::Logical,
            },
            durability: if self.fsync {
                Durability::Fsync
            } else {
                Durability::Flush
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file_values() {
        let mut c: Config = toml::from_str(
            r#"
            bind = "0.0.0.0:9000"
            log_path = "/var/lib/cm/events.log"
            heartbeat_secs = 5
            "#,
        )
        .unwrap();
        assert_eq!(c.token_file, PathBuf::from("tokens.json"));
        c.apply_env([
            ("CM_BIND".to_string(), "127.0.0.1:7000".to_string()),
            ("CM_CLOCK".to_string(), "logical".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(c.bind.port(), 7000);
        assert_eq!(c.heartbeat_secs, 5);
        assert_eq!(c.clock, ClockMode::Logical);
    }

    #[test]
    fn bad_env_value_is_reported() {
        let mut c = Config::default();
        let err = c
            .apply_env([("CM_HEARTBEAT_SECS".to_string(), "soon".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("CM_HEARTBEAT_SECS"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("colour = \"blue\"").is_err());
    }
}
