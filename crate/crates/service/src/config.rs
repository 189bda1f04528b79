//! Server settings from a TOML table, overridable by environment variables.
//!
//! ```toml
//! bind = "127.0.0.1:7878"
//! lease_seconds = 600
//! redundancy = 1
//! admin_token = "change-me"
//!
//! [annotators]
//! alice = "token-a"
//! bob = "token-b"
//! ```
//!
//! | variable | key |
//! |---|---|
//! | `NERLOOP_BIND` | `bind` |
//! | `NERLOOP_LEASE_SECONDS` | `lease_seconds` |
//! | `NERLOOP_REDUNDANCY` | `redundancy` |
//! | `NERLOOP_ADMIN_TOKEN` | `admin_token` |
//! | `NERLOOP_ANNOTATORS` | `annotators`, as `alice=token-a,bob=token-b` |

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("{var}: {message}")]
    Env { var: String, message: String },
    #[error("token of `{0}` is shared with another identity")]
    DuplicateToken(String),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub lease_seconds: u64,
    /// Used when a project is created.
    pub redundancy: usize,
    pub admin_token: Option<String>,
    /// Annotator id to token.
    pub annotators: BTreeMap<String, String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            lease_seconds: 600,
            redundancy: 1,
            admin_token: None,
            annotators: BTreeMap::new(),
        }
    }
}

/// Who a request token belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Identity {
    Annotator(String),
    Admin,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lease_seconds == 0 {
            return Err(ConfigError::NotPositive("lease_seconds"));
        }
        if self.redundancy == 0 {
            return Err(ConfigError::NotPositive("redundancy"));
        }
        self.identities().map(|_| ())
    }

    /// Applies `NERLOOP_*` overrides from `vars`; other variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (var, value) in vars {
            let bad = |message: String| ConfigError::Env {
                var: var.clone(),
                message,
            };
            match var.as_str() {
                "NERLOOP_BIND" => self.bind = value.clone(),
                "NERLOOP_LEASE_SECONDS" => self.lease_seconds = value.parse().map_err(|e| bad(format!("{e}")))?,
                "NERLOOP_REDUNDANCY" => self.redundancy = value.parse().map_err(|e| bad(format!("{e}")))?,
                "NERLOOP_ADMIN_TOKEN" => self.admin_token = Some(value.clone()),
                "NERLOOP_ANNOTATORS" => {
                    self.annotators = value
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|pair| {
                            pair.split_once('=')
                                .map(|(a, t)| (a.trim().to_string(), t.trim().to_string()))
                                .ok_or_else(|| bad(format!("`{pair}` is not annotator=token")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                _ => {}
            }
        }
        self.validate()
    }

    /// Token to identity.
    pub fn identities(&self) -> Result<HashMap<String, Identity>, ConfigError> {
        let mut map = HashMap::new();
        for (annotator, token) in &self.annotators {
            if map.insert(token.clone(), Identity::Annotator(annotator.clone())).is_some() {
                return Err(ConfigError::DuplicateToken(annotator.clone()));
            }
        }
        if let Some(t) = &self.admin_token {
            if map.insert(t.clone(), Identity::Admin).is_some() {
                return Err(ConfigError::DuplicateToken("admin".into()));
            }
        }
        Ok(map)
    }
}
