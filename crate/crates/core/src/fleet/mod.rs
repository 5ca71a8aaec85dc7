//! Snapshot-based container fleet: launch, snapshot, clone, reset, destroy.

mod config;
pub mod fake;
pub mod incus;
mod manager;
mod ports;
mod probe;
mod runtime;

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{FleetConfig, ImageSpec, PortRange, ENV_RUNTIME_SOCKET};
pub use manager::{labels, FleetManager, LaunchStats, LaunchSummary, ListFilter, Transition};
pub use ports::PortAllocator;
pub use probe::{wait_healthy, Backoff, HealthProbe, HealthStatus, HttpProbe};
pub use runtime::{
    ImageInfo, InstanceInfo, InstanceSource, InstanceSpec, RuntimeClient, RuntimeError, SnapshotInfo, SnapshotKey,
};

pub const LABEL_EPISODE: &str = "episode";
pub const LABEL_ROLE: &str = "role";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageSource {
    OciRegistry,
    LocalImport,
}

/// An image known to the runtime. `reference` is the registry reference or
/// local archive path it was imported from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub name: String,
    pub source: ImageSource,
    #[serde(default)]
    pub reference: String,
    #[serde(default)]
    pub digest: Option<String>,
}

impl ImageRef {
    pub fn local(name: &str) -> Self {
        ImageRef { name: name.into(), source: ImageSource::LocalImport, reference: String::new(), digest: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerState {
    Starting,
    Running,
    Stopped,
    Destroyed,
}

impl ContainerState {
    /// Lifecycle edges. Running→Running is a reset.
    pub fn can_transition(self, to: ContainerState) -> bool {
        use ContainerState::*;
        matches!((self, to), (Starting, Running) | (Running, Running) | (Running, Stopped) | (Stopped, Destroyed))
    }

    pub fn is_live(self) -> bool {
        self != ContainerState::Destroyed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    WebServer,
    Browser,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::WebServer => "web-server",
            Role::Browser => "browser",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub name: String,
    /// Container the snapshot was taken from.
    pub parent: String,
    pub created_at_ms: u64,
}

impl SnapshotRef {
    pub fn key(&self) -> SnapshotKey {
        SnapshotKey { container: self.parent.clone(), name: self.name.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Image { name: String },
    Snapshot { parent: String, name: String },
    Container { id: String },
}

impl Origin {
    pub fn image(name: &str) -> Self {
        Origin::Image { name: name.into() }
    }

    pub fn snapshot(s: &SnapshotRef) -> Self {
        Origin::Snapshot { parent: s.parent.clone(), name: s.name.clone() }
    }

    fn source(&self) -> InstanceSource {
        match self {
            Origin::Image { name } => InstanceSource::Image { alias: name.clone() },
            Origin::Snapshot { parent, name } => {
                InstanceSource::Snapshot { key: SnapshotKey { container: parent.clone(), name: name.clone() } }
            }
            Origin::Container { id } => InstanceSource::Instance { name: id.clone() },
        }
    }

    fn from_source(s: &InstanceSource) -> Self {
        match s {
            InstanceSource::Image { alias } => Origin::Image { name: alias.clone() },
            InstanceSource::Snapshot { key } => {
                Origin::Snapshot { parent: key.container.clone(), name: key.name.clone() }
            }
            InstanceSource::Instance { name } => Origin::Container { id: name.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHandle {
    pub id: String,
    pub origin: Origin,
    pub state: ContainerState,
    /// `host:port`; present exactly while Running.
    pub endpoint: Option<String>,
    pub created_at_ms: u64,
    pub labels: BTreeMap<String, String>,
}

impl ContainerHandle {
    pub fn label(&self, k: &str) -> Option<&str> {
        self.labels.get(k).map(String::as_str)
    }

    pub fn port(&self) -> Option<u16> {
        self.endpoint.as_deref()?.rsplit_once(':')?.1.parse().ok()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("image pull failed: {0}")]
    PullFailed(String),
    #[error("image digest mismatch: expected {expected}, got {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("launch failed: {0}")]
    LaunchFailed(String),
    #[error("health check timed out for {0}")]
    HealthTimeout(String),
    #[error("no free host port in range")]
    PortExhausted,
    #[error("snapshot failed: {0}")]
    SnapshotFailed(String),
    #[error("name already in use: {0}")]
    NameCollision(String),
    #[error("clone failed: {0}")]
    CloneFailed(String),
    #[error("reset failed: {0}")]
    ResetFailed(String),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: ContainerState, to: ContainerState },
    #[error("no such container: {0}")]
    NotFound(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("invalid fleet config: {0}")]
    Config(String),
}

impl From<RuntimeError> for FleetError {
    fn from(e: RuntimeError) -> Self {
        FleetError::Runtime(e.to_string())
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ContainerState::*;

    #[test]
    fn lifecycle_edges() {
        let all = [Starting, Running, Stopped, Destroyed];
        let legal: Vec<_> =
            all.iter().flat_map(|a| all.iter().map(move |b| (*a, *b))).filter(|(a, b)| a.can_transition(*b)).collect();
        assert_eq!(legal, vec![(Starting, Running), (Running, Running), (Running, Stopped), (Stopped, Destroyed)]);
    }

    #[test]
    fn handle_port() {
        let h = ContainerHandle {
            id: "web-1".into(),
            origin: Origin::image("shop"),
            state: Running,
            endpoint: Some("127.0.0.1:20001".into()),
            created_at_ms: 0,
            labels: BTreeMap::new(),
        };
        assert_eq!(h.port(), Some(20001));
    }

    #[test]
    fn origin_source_round_trip() {
        for o in [
            Origin::image("shop"),
            Origin::Snapshot { parent: "a".into(), name: "s".into() },
            Origin::Container { id: "b".into() },
        ] {
            assert_eq!(Origin::from_source(&o.source()), o);
        }
    }

    #[test]
    fn image_source_names() {
        assert_eq!(serde_json::to_string(&ImageSource::OciRegistry).unwrap(), "\"oci-registry\"");
        assert_eq!(serde_json::to_string(&Role::WebServer).unwrap(), "\"web-server\"");
    }
}
