use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use webenv_core::fleet::ENV_RUNTIME_SOCKET;
use webenv_core::{FleetConfig, ServiceConfig};

use crate::error::CliError;

pub const ENV_BROWSER_ENDPOINT: &str = "WEBENV_BROWSER_ENDPOINT";

/// Contents of `--config`. Flags override it and environment variables
/// override flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub runtime_socket: Option<PathBuf>,
    pub browser_endpoint: Option<String>,
    /// Separate fleet config file; `[fleet]` inline is used when absent.
    pub fleet_config: Option<PathBuf>,
    pub log_level: Option<String>,
    pub fleet: Option<FleetConfig>,
    pub service: ServiceConfig,
    pub host: Option<String>,
    pub port: Option<u16>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runtime_socket: Option<PathBuf>,
    pub browser_endpoint: Option<String>,
    pub fleet_config: Option<PathBuf>,
    pub log_level: Option<String>,
}

fn parse_by_ext<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, String> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(text).map_err(|e| e.to_string()),
        _ => toml::from_str(text).map_err(|e| e.to_string()),
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
        parse_by_ext(path, &text).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    /// Applies flags, then the environment.
    pub fn resolve(mut self, flags: &Overrides) -> Self {
        macro_rules! take {
            ($f:ident) => {
                if let Some(v) = &flags.$f {
                    self.$f = Some(v.clone());
                }
            };
        }
        take!(runtime_socket);
        take!(browser_endpoint);
        take!(fleet_config);
        take!(log_level);
        if let Some(s) = std::env::var_os(ENV_RUNTIME_SOCKET) {
            self.runtime_socket = Some(s.into());
        }
        if let Ok(s) = std::env::var(ENV_BROWSER_ENDPOINT) {
            self.browser_endpoint = Some(s);
        }
        if let Some(b) = &self.browser_endpoint {
            self.service.session.debug_endpoint = b.clone();
        }
        self
    }

    /// The fleet config after the socket override, validated.
    pub fn fleet_config(&self) -> Result<FleetConfig, CliError> {
        let mut cfg = match &self.fleet_config {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::env(format!("fleet config {} does not exist", p.display())));
                }
                FleetConfig::load(p)?
            }
            None => self.fleet.clone().unwrap_or_default(),
        };
        if let Some(s) = &self.runtime_socket {
            cfg.socket = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
