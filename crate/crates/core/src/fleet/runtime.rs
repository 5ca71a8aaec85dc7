use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ImageRef;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("already exists: {0}")]
    Conflict(String),
    #[error("runtime transport: {0}")]
    Transport(String),
    #[error("runtime operation failed: {0}")]
    Failed(String),
}

/// A snapshot as the runtime names it: `<container>/<snapshot>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotKey {
    pub container: String,
    pub name: String,
}

impl std::fmt::Display for SnapshotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.container, self.name)
    }
}

impl SnapshotKey {
    pub fn parse(s: &str) -> Option<Self> {
        let (c, n) = s.split_once('/')?;
        (!c.is_empty() && !n.is_empty()).then(|| SnapshotKey { container: c.into(), name: n.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceSource {
    Image {
        alias: String,
    },
    Snapshot {
        key: SnapshotKey,
    },
    /// Copy of another instance, running or not.
    Instance {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub name: String,
    pub source: InstanceSource,
    /// Host port forwarded to the application port inside the container.
    pub host_port: u16,
    pub app_port: u16,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub name: String,
    pub digest: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub name: String,
    pub created_at_ms: u64,
}

/// What the runtime knows about a managed instance; enough to rebuild the
/// fleet table after a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub name: String,
    pub running: bool,
    pub host_port: Option<u16>,
    pub labels: BTreeMap<String, String>,
    pub source: Option<InstanceSource>,
    pub snapshots: Vec<SnapshotInfo>,
    pub created_at_ms: u64,
}

/// Control surface of a snapshot-capable container runtime.
#[async_trait]
pub trait RuntimeClient: Send + Sync {
    fn kind(&self) -> &'static str;

    async fn import_image(&self, image: &ImageRef) -> Result<ImageInfo, RuntimeError>;
    async fn image_info(&self, name: &str) -> Result<Option<ImageInfo>, RuntimeError>;

    async fn create(&self, spec: &InstanceSpec) -> Result<(), RuntimeError>;
    async fn start(&self, name: &str) -> Result<(), RuntimeError>;
    async fn stop(&self, name: &str) -> Result<(), RuntimeError>;
    async fn delete(&self, name: &str) -> Result<(), RuntimeError>;

    async fn snapshot(&self, name: &str, snapshot: &str) -> Result<(), RuntimeError>;
    /// Restores `name` to `snapshot`, which may belong to another instance
    /// (the one `name` was cloned from). Host port, labels, and the running
    /// state are kept.
    async fn restore(&self, name: &str, snapshot: &SnapshotKey) -> Result<(), RuntimeError>;
    async fn delete_snapshot(&self, key: &SnapshotKey) -> Result<(), RuntimeError>;

    async fn list_instances(&self) -> Result<Vec<InstanceInfo>, RuntimeError>;
    /// Bytes used in the storage pool.
    async fn storage_used(&self) -> Result<u64, RuntimeError>;
    /// Resident memory of one instance in bytes.
    async fn memory_usage(&self, name: &str) -> Result<u64, RuntimeError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_keys() {
        let k = SnapshotKey::parse("web-1/initial").unwrap();
        assert_eq!(k.to_string(), "web-1/initial");
        assert!(SnapshotKey::parse("web-1").is_none());
        assert!(SnapshotKey::parse("/x").is_none());
    }

    #[test]
    fn source_wire_format() {
        let s = InstanceSource::Snapshot { key: SnapshotKey { container: "a".into(), name: "b".into() } };
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"type":"snapshot","key":{"container":"a","name":"b"}}"#);
    }
}
