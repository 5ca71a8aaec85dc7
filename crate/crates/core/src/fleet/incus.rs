//! Client for an Incus-compatible REST API on a local Unix socket.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::header::{CONTENT_TYPE, HOST};
use hyper::{Method, Request};
use hyper_util::rt::TokioIo;
use serde_json::{json, Value};
use tokio::net::UnixStream;
use tracing::debug;

use super::runtime::*;
use super::{ImageRef, ImageSource};

const KEY_MANAGED: &str = "user.webenv.managed";
const KEY_PORT: &str = "user.webenv.port";
const KEY_SOURCE: &str = "user.webenv.source";
const KEY_CREATED: &str = "user.webenv.created_ms";
const LABEL_PREFIX: &str = "user.webenv.label.";
const PROXY_DEVICE: &str = "webenv-http";

pub struct IncusClient {
    socket: PathBuf,
    pool: String,
    op_timeout: Duration,
}

fn transport(e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Transport(e.to_string())
}

fn enc(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

/// Splits an OCI reference into registry server and image path;
/// references without a registry host default to Docker Hub.
pub fn oci_server(reference: &str) -> (String, String) {
    match reference.split_once('/') {
        Some((host, rest)) if host.contains('.') || host.contains(':') || host == "localhost" => {
            (format!("https://{host}"), rest.to_string())
        }
        _ => ("https://docker.io".to_string(), reference.to_string()),
    }
}

fn rfc3339_ms(v: &Value) -> u64 {
    v.as_str()
        .and_then(|s| chrono::DateTime::parse_from_rfc3339(s).ok())
        .map(|t| t.timestamp_millis().max(0) as u64)
        .unwrap_or(0)
}

impl IncusClient {
    pub fn new(socket: impl AsRef<Path>, pool: &str) -> Self {
        IncusClient {
            socket: socket.as_ref().to_path_buf(),
            pool: pool.to_string(),
            op_timeout: Duration::from_secs(600),
        }
    }

    async fn raw(
        &self,
        method: Method,
        path: &str,
        body: Bytes,
        content_type: &str,
    ) -> Result<(u16, Value), RuntimeError> {
        let stream = UnixStream::connect(&self.socket)
            .await
            .map_err(|e| transport(format!("{}: {e}", self.socket.display())))?;
        let (mut sender, conn) =
            hyper::client::conn::http1::handshake(TokioIo::new(stream)).await.map_err(transport)?;
        tokio::spawn(async move {
            let _ = conn.await;
        });
        let req = Request::builder()
            .method(method.clone())
            .uri(path)
            .header(HOST, "incus")
            .header(CONTENT_TYPE, content_type)
            .body(Full::new(body))
            .map_err(transport)?;
        let resp = sender.send_request(req).await.map_err(transport)?;
        let status = resp.status().as_u16();
        let bytes = resp.into_body().collect().await.map_err(transport)?.to_bytes();
        let v: Value =
            serde_json::from_slice(&bytes).map_err(|e| transport(format!("bad response to {method} {path}: {e}")))?;
        debug!(%method, path, status, "runtime call");
        Ok((status, v))
    }

    /// Sends a request and, for async responses, waits for the operation.
    /// Returns the metadata of the response or of the finished operation.
    async fn call(&self, method: Method, path: &str, body: Option<Value>) -> Result<Value, RuntimeError> {
        let bytes = body.map(|b| Bytes::from(b.to_string())).unwrap_or_default();
        self.call_raw(method, path, bytes, "application/json").await
    }

    async fn call_raw(
        &self,
        method: Method,
        path: &str,
        body: Bytes,
        content_type: &str,
    ) -> Result<Value, RuntimeError> {
        let (status, v) = self.raw(method, path, body, content_type).await?;
        match v["type"].as_str() {
            Some("sync") => Ok(v["metadata"].clone()),
            Some("async") => {
                let op = v["operation"].as_str().ok_or_else(|| transport("async response without operation"))?;
                self.wait(op).await
            }
            _ => {
                let code = v["error_code"].as_u64().unwrap_or(status as u64);
                let msg = v["error"].as_str().unwrap_or("unknown error").to_string();
                Err(match code {
                    404 => RuntimeError::NotFound(msg),
                    409 => RuntimeError::Conflict(msg),
                    _ => RuntimeError::Failed(format!("{code}: {msg}")),
                })
            }
        }
    }

    async fn wait(&self, op: &str) -> Result<Value, RuntimeError> {
        let path = format!("{op}/wait?timeout={}", self.op_timeout.as_secs());
        let (_, v) = self.raw(Method::GET, &path, Bytes::new(), "application/json").await?;
        let md = &v["metadata"];
        match md["status"].as_str() {
            Some("Success") => Ok(md["metadata"].clone()),
            _ => {
                let err =
                    md["err"].as_str().filter(|s| !s.is_empty()).or(v["error"].as_str()).unwrap_or("operation failed");
                if err.contains("not found") {
                    Err(RuntimeError::NotFound(err.to_string()))
                } else if err.contains("already exists") {
                    Err(RuntimeError::Conflict(err.to_string()))
                } else {
                    Err(RuntimeError::Failed(err.to_string()))
                }
            }
        }
    }

    async fn set_state(&self, name: &str, action: &str) -> Result<(), RuntimeError> {
        let body = json!({ "action": action, "timeout": 30, "force": action == "stop" });
        self.call(Method::PUT, &format!("/1.0/instances/{}/state", enc(name)), Some(body)).await.map(|_| ())
    }

    fn source_body(source: &InstanceSource) -> Value {
        match source {
            InstanceSource::Image { alias } => json!({ "type": "image", "alias": alias }),
            InstanceSource::Snapshot { key } => json!({ "type": "copy", "source": key.to_string() }),
            InstanceSource::Instance { name } => json!({ "type": "copy", "source": name, "instance_only": true }),
        }
    }

    fn create_body(&self, spec: &InstanceSpec) -> Value {
        let mut config = serde_json::Map::new();
        config.insert(KEY_MANAGED.into(), "true".into());
        config.insert(KEY_PORT.into(), spec.host_port.to_string().into());
        config.insert(KEY_SOURCE.into(), serde_json::to_string(&spec.source).unwrap_or_default().into());
        config.insert(KEY_CREATED.into(), super::now_ms().to_string().into());
        for (k, v) in &spec.labels {
            config.insert(format!("{LABEL_PREFIX}{k}"), v.clone().into());
        }
        json!({
            "name": spec.name,
            "type": "container",
            "source": Self::source_body(&spec.source),
            "config": config,
            "devices": {
                "root": { "type": "disk", "path": "/", "pool": self.pool },
                PROXY_DEVICE: {
                    "type": "proxy",
                    "listen": format!("tcp:0.0.0.0:{}", spec.host_port),
                    "connect": format!("tcp:127.0.0.1:{}", spec.app_port),
                },
            },
        })
    }

    fn parse_instance(v: &Value) -> Option<InstanceInfo> {
        let config = v["config"].as_object()?;
        if config.get(KEY_MANAGED).and_then(Value::as_str) != Some("true") {
            return None;
        }
        let labels: BTreeMap<String, String> = config
            .iter()
            .filter_map(|(k, val)| Some((k.strip_prefix(LABEL_PREFIX)?.to_string(), val.as_str()?.to_string())))
            .collect();
        let snapshots = v["snapshots"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|s| {
                        let name = s["name"].as_str()?;
                        let short = name.rsplit('/').next().unwrap_or(name);
                        Some(SnapshotInfo { name: short.to_string(), created_at_ms: rfc3339_ms(&s["created_at"]) })
                    })
                    .collect()
            })
            .unwrap_or_default();
        Some(InstanceInfo {
            name: v["name"].as_str()?.to_string(),
            running: v["status"].as_str() == Some("Running"),
            host_port: config.get(KEY_PORT).and_then(Value::as_str).and_then(|p| p.parse().ok()),
            labels,
            source: config.get(KEY_SOURCE).and_then(Value::as_str).and_then(|s| serde_json::from_str(s).ok()),
            snapshots,
            created_at_ms: config
                .get(KEY_CREATED)
                .and_then(Value::as_str)
                .and_then(|s| s.parse().ok())
                .unwrap_or_else(|| rfc3339_ms(&v["created_at"])),
        })
    }

    async fn image_by_fingerprint(&self, name: &str, fp: &str) -> Result<ImageInfo, RuntimeError> {
        let img = self.call(Method::GET, &format!("/1.0/images/{}", enc(fp)), None).await?;
        Ok(ImageInfo {
            name: name.to_string(),
            digest: format!("sha256:{fp}"),
            size_bytes: img["size"].as_u64().unwrap_or(0),
        })
    }
}

#[async_trait]
impl RuntimeClient for IncusClient {
    fn kind(&self) -> &'static str {
        "incus"
    }

    async fn import_image(&self, image: &ImageRef) -> Result<ImageInfo, RuntimeError> {
        if let Some(info) = self.image_info(&image.name).await? {
            return Ok(info);
        }
        let md = match image.source {
            ImageSource::OciRegistry => {
                let (server, alias) = oci_server(&image.reference);
                let body = json!({
                    "source": { "type": "image", "mode": "pull", "server": server, "protocol": "oci", "alias": alias },
                    "aliases": [{ "name": image.name }],
                });
                self.call(Method::POST, "/1.0/images", Some(body)).await?
            }
            ImageSource::LocalImport => {
                let data = tokio::fs::read(&image.reference)
                    .await
                    .map_err(|e| RuntimeError::NotFound(format!("{}: {e}", image.reference)))?;
                let md =
                    self.call_raw(Method::POST, "/1.0/images", Bytes::from(data), "application/octet-stream").await?;
                let fp = md["fingerprint"].as_str().ok_or_else(|| transport("import without fingerprint"))?;
                let alias = json!({ "name": image.name, "target": fp });
                self.call(Method::POST, "/1.0/images/aliases", Some(alias)).await?;
                md
            }
        };
        let fp = md["fingerprint"].as_str().ok_or_else(|| transport("import without fingerprint"))?;
        self.image_by_fingerprint(&image.name, fp).await
    }

    async fn image_info(&self, name: &str) -> Result<Option<ImageInfo>, RuntimeError> {
        match self.call(Method::GET, &format!("/1.0/images/aliases/{}", enc(name)), None).await {
            Ok(alias) => {
                let fp = alias["target"].as_str().ok_or_else(|| transport("alias without target"))?;
                self.image_by_fingerprint(name, fp).await.map(Some)
            }
            Err(RuntimeError::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    async fn create(&self, spec: &InstanceSpec) -> Result<(), RuntimeError> {
        self.call(Method::POST, "/1.0/instances", Some(self.create_body(spec))).await.map(|_| ())
    }

    async fn start(&self, name: &str) -> Result<(), RuntimeError> {
        self.set_state(name, "start").await
    }

    async fn stop(&self, name: &str) -> Result<(), RuntimeError> {
        self.set_state(name, "stop").await
    }

    async fn delete(&self, name: &str) -> Result<(), RuntimeError> {
        self.call(Method::DELETE, &format!("/1.0/instances/{}", enc(name)), None).await.map(|_| ())
    }

    async fn snapshot(&self, name: &str, snapshot: &str) -> Result<(), RuntimeError> {
        let body = json!({ "name": snapshot, "stateful": false });
        self.call(Method::POST, &format!("/1.0/instances/{}/snapshots", enc(name)), Some(body)).await.map(|_| ())
    }

    async fn restore(&self, name: &str, snapshot: &SnapshotKey) -> Result<(), RuntimeError> {
        if snapshot.container == name {
            let body = json!({ "restore": snapshot.name });
            return self.call(Method::PUT, &format!("/1.0/instances/{}", enc(name)), Some(body)).await.map(|_| ());
        }
        // A snapshot of the parent cannot be restored in place: rebuild the
        // instance from it under the same name, port, and labels.
        let cur = self.call(Method::GET, &format!("/1.0/instances/{}", enc(name)), None).await?;
        let info =
            Self::parse_instance(&cur).ok_or_else(|| RuntimeError::NotFound(format!("{name} is not managed")))?;
        let port = info.host_port.ok_or_else(|| RuntimeError::Failed(format!("{name} has no port")))?;
        let app_port = cur["devices"][PROXY_DEVICE]["connect"]
            .as_str()
            .and_then(|c| c.rsplit(':').next()?.parse().ok())
            .unwrap_or(80);
        self.call(
            Method::GET,
            &format!("/1.0/instances/{}/snapshots/{}", enc(&snapshot.container), enc(&snapshot.name)),
            None,
        )
        .await?;
        if info.running {
            self.stop(name).await?;
        }
        self.delete(name).await?;
        let spec = InstanceSpec {
            name: name.to_string(),
            source: InstanceSource::Snapshot { key: snapshot.clone() },
            host_port: port,
            app_port,
            labels: info.labels,
        };
        let mut body = self.create_body(&spec);
        if let Some(orig) = info.source {
            body["config"][KEY_SOURCE] = serde_json::to_string(&orig).unwrap_or_default().into();
        }
        self.call(Method::POST, "/1.0/instances", Some(body)).await?;
        if info.running {
            self.start(name).await?;
        }
        Ok(())
    }

    async fn delete_snapshot(&self, key: &SnapshotKey) -> Result<(), RuntimeError> {
        let path = format!("/1.0/instances/{}/snapshots/{}", enc(&key.container), enc(&key.name));
        self.call(Method::DELETE, &path, None).await.map(|_| ())
    }

    async fn list_instances(&self) -> Result<Vec<InstanceInfo>, RuntimeError> {
        let v = self.call(Method::GET, "/1.0/instances?recursion=2", None).await?;
        Ok(v.as_array().map(|a| a.iter().filter_map(Self::parse_instance).collect()).unwrap_or_default())
    }

    async fn storage_used(&self) -> Result<u64, RuntimeError> {
        let v = self.call(Method::GET, &format!("/1.0/storage-pools/{}/resources", enc(&self.pool)), None).await?;
        v["space"]["used"].as_u64().ok_or_else(|| transport("pool resources without space.used"))
    }

    async fn memory_usage(&self, name: &str) -> Result<u64, RuntimeError> {
        let v = self.call(Method::GET, &format!("/1.0/instances/{}/state", enc(name)), None).await?;
        Ok(v["memory"]["usage"].as_u64().unwrap_or(0))
    }
}
