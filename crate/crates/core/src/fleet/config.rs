use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{FleetError, ImageRef, ImageSource};

pub const ENV_RUNTIME_SOCKET: &str = "WEBENV_RUNTIME_SOCKET";

/// Inclusive host port range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    pub start: u16,
    pub end: u16,
}

impl PortRange {
    pub fn len(&self) -> u32 {
        self.end as u32 - self.start as u32 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for PortRange {
    fn default() -> Self {
        PortRange { start: 20000, end: 29999 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub name: String,
    #[serde(default = "default_source")]
    pub source: ImageSource,
    pub reference: String,
    #[serde(default)]
    pub digest: Option<String>,
}

fn default_source() -> ImageSource {
    ImageSource::OciRegistry
}

impl ImageSpec {
    pub fn to_ref(&self) -> ImageRef {
        ImageRef {
            name: self.name.clone(),
            source: self.source,
            reference: self.reference.clone(),
            digest: self.digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    /// Unix socket of the runtime API.
    pub socket: PathBuf,
    pub storage_pool: String,
    pub port_range: PortRange,
    /// Port the web application listens on inside the container.
    pub app_port: u16,
    /// Host the forwarded ports are reachable on.
    pub host: String,
    pub probe_path: String,
    #[serde(with = "crate::serde_ms")]
    pub health_timeout: Duration,
    pub images: Vec<ImageSpec>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            socket: PathBuf::from("/var/lib/incus/unix.socket"),
            storage_pool: "default".into(),
            port_range: PortRange::default(),
            app_port: 80,
            host: "127.0.0.1".into(),
            probe_path: "/".into(),
            health_timeout: Duration::from_secs(60),
            images: Vec::new(),
        }
    }
}

impl FleetConfig {
    /// Reads TOML or JSON by file extension.
    pub fn load(path: &Path) -> Result<Self, FleetError> {
        let text = std::fs::read_to_string(path).map_err(|e| FleetError::Config(format!("{}: {e}", path.display())))?;
        let cfg: FleetConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| FleetError::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| FleetError::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the socket override from the environment.
    pub fn with_env(mut self) -> Self {
        if let Some(s) = std::env::var_os(ENV_RUNTIME_SOCKET) {
            self.socket = PathBuf::from(s);
        }
        self
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        if self.port_range.start == 0 || self.port_range.start > self.port_range.end {
            return Err(FleetError::Config(format!(
                "bad port range {}..={}",
                self.port_range.start, self.port_range.end
            )));
        }
        if self.health_timeout.is_zero() {
            return Err(FleetError::Config("health_timeout must be positive".into()));
        }
        if !self.probe_path.starts_with('/') {
            return Err(FleetError::Config("probe_path must start with /".into()));
        }
        Ok(())
    }

    pub fn image(&self, name: &str) -> Option<&ImageSpec> {
        self.images.iter().find(|i| i.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("fleet.toml");
        std::fs::write(
            &t,
            r#"
storage_pool = "zfs"
port_range = { start = 30000, end = 30010 }
health_timeout = 5000

[[images]]
name = "shopping"
reference = "registry.example/shop:1"
"#,
        )
        .unwrap();
        let a = FleetConfig::load(&t).unwrap();
        assert_eq!(a.storage_pool, "zfs");
        assert_eq!(a.port_range.len(), 11);
        assert_eq!(a.health_timeout, Duration::from_secs(5));
        assert_eq!(a.image("shopping").unwrap().source, ImageSource::OciRegistry);

        let j = dir.path().join("fleet.json");
        std::fs::write(&j, serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(FleetConfig::load(&j).unwrap(), a);
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut c = FleetConfig { port_range: PortRange { start: 10, end: 9 }, ..Default::default() };
        assert!(c.validate().is_err());
        c.port_range = PortRange { start: 0, end: 9 };
        assert!(c.validate().is_err());
    }
}
