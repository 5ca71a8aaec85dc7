use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};
use tokio::time::Instant;
use tracing::{debug, warn};

use super::ports::PortAllocator;
use super::probe::{wait_healthy, Backoff, HealthProbe, HealthStatus};
use super::runtime::{InstanceSpec, RuntimeClient, RuntimeError, SnapshotKey};
use super::*;

const TRANSITION_LOG_CAP: usize = 100_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ListFilter {
    pub role: Option<Role>,
    pub state: Option<ContainerState>,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    /// Skip Destroyed handles.
    #[serde(default)]
    pub live_only: bool,
}

impl ListFilter {
    pub fn live() -> Self {
        ListFilter { live_only: true, ..Default::default() }
    }

    fn matches(&self, h: &ContainerHandle) -> bool {
        (!self.live_only || h.state.is_live())
            && self.state.is_none_or(|s| s == h.state)
            && self.role.is_none_or(|r| h.label(LABEL_ROLE) == Some(r.as_str()))
            && self.labels.iter().all(|(k, v)| h.label(k) == Some(v.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaunchStats {
    pub launch_latency_s: f64,
    pub storage_delta_bytes: u64,
    pub memory_rss_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchSummary {
    pub origin: Origin,
    pub warmup: usize,
    pub samples: Vec<LaunchStats>,
    pub mean_latency_s: f64,
    /// Population standard deviation.
    pub stddev_latency_s: f64,
    pub min_latency_s: f64,
    pub max_latency_s: f64,
    pub mean_storage_delta_bytes: f64,
    pub mean_memory_rss_bytes: f64,
    pub base_image_bytes: Option<u64>,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl LaunchSummary {
    fn new(origin: Origin, warmup: usize, samples: Vec<LaunchStats>, base_image_bytes: Option<u64>) -> Self {
        let lat: Vec<f64> = samples.iter().map(|s| s.launch_latency_s).collect();
        let (mean, std) = mean_std(&lat);
        let n = samples.len() as f64;
        LaunchSummary {
            origin,
            warmup,
            mean_latency_s: mean,
            stddev_latency_s: std,
            min_latency_s: lat.iter().cloned().fold(f64::INFINITY, f64::min),
            max_latency_s: lat.iter().cloned().fold(0.0, f64::max),
            mean_storage_delta_bytes: samples.iter().map(|s| s.storage_delta_bytes as f64).sum::<f64>() / n,
            mean_memory_rss_bytes: samples.iter().map(|s| s.memory_rss_bytes as f64).sum::<f64>() / n,
            samples,
            base_image_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub id: String,
    pub from: ContainerState,
    pub to: ContainerState,
}

struct Table {
    handles: IndexMap<String, ContainerHandle>,
    ports: PortAllocator,
    port_of: HashMap<String, u16>,
    snapshots: BTreeMap<SnapshotKey, SnapshotRef>,
    images: BTreeMap<String, ImageRef>,
    transitions: VecDeque<Transition>,
    illegal: usize,
}

impl Table {
    fn set_state(&mut self, id: &str, to: ContainerState) -> Result<ContainerHandle, FleetError> {
        let h = self.handles.get_mut(id).ok_or_else(|| FleetError::NotFound(id.into()))?;
        let from = h.state;
        if !from.can_transition(to) {
            self.illegal += 1;
            return Err(FleetError::IllegalTransition { from, to });
        }
        h.state = to;
        h.endpoint = match to {
            ContainerState::Running => h.endpoint.take(),
            _ => None,
        };
        let h = h.clone();
        if self.transitions.len() == TRANSITION_LOG_CAP {
            self.transitions.pop_front();
        }
        self.transitions.push_back(Transition { id: id.into(), from, to });
        Ok(h)
    }
}

/// Shared, internally synchronized fleet. Operations on distinct handles run
/// in parallel; operations on one handle are serialized.
pub struct FleetManager {
    runtime: Arc<dyn RuntimeClient>,
    probe: Arc<dyn HealthProbe>,
    cfg: FleetConfig,
    backoff: Backoff,
    table: Mutex<Table>,
    locks: Mutex<HashMap<String, Arc<AsyncMutex<()>>>>,
}

fn new_id() -> String {
    format!("wx-{}", &uuid::Uuid::new_v4().simple().to_string()[..12])
}

fn valid_snapshot_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 63
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

impl FleetManager {
    pub fn new(
        runtime: Arc<dyn RuntimeClient>,
        probe: Arc<dyn HealthProbe>,
        cfg: FleetConfig,
    ) -> Result<Self, FleetError> {
        cfg.validate()?;
        let table = Table {
            handles: IndexMap::new(),
            ports: PortAllocator::new(cfg.port_range),
            port_of: HashMap::new(),
            snapshots: BTreeMap::new(),
            images: BTreeMap::new(),
            transitions: VecDeque::new(),
            illegal: 0,
        };
        Ok(FleetManager {
            runtime,
            probe,
            cfg,
            backoff: Backoff::default(),
            table: Mutex::new(table),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_backoff(mut self, b: Backoff) -> Self {
        self.backoff = b;
        self
    }

    pub fn config(&self) -> &FleetConfig {
        &self.cfg
    }

    pub fn runtime(&self) -> &Arc<dyn RuntimeClient> {
        &self.runtime
    }

    /// Rebuilds the handle table from what the runtime reports.
    pub async fn recover(&self) -> Result<usize, FleetError> {
        let infos = self.runtime.list_instances().await?;
        let mut t = self.table.lock().unwrap();
        let mut n = 0;
        for info in infos {
            if t.handles.contains_key(&info.name) {
                continue;
            }
            let state = if info.running { ContainerState::Running } else { ContainerState::Stopped };
            if let Some(p) = info.host_port {
                if !t.ports.reserve(p) {
                    warn!(container = %info.name, port = p, "port already claimed during recovery");
                }
                t.port_of.insert(info.name.clone(), p);
            }
            let endpoint = match (state, info.host_port) {
                (ContainerState::Running, Some(p)) => Some(format!("{}:{p}", self.cfg.host)),
                _ => None,
            };
            for s in &info.snapshots {
                let r = SnapshotRef { name: s.name.clone(), parent: info.name.clone(), created_at_ms: s.created_at_ms };
                t.snapshots.insert(r.key(), r);
            }
            let origin =
                info.source.as_ref().map(Origin::from_source).unwrap_or(Origin::Container { id: String::new() });
            let h = ContainerHandle {
                id: info.name.clone(),
                origin,
                state,
                endpoint,
                created_at_ms: info.created_at_ms,
                labels: info.labels,
            };
            t.handles.insert(info.name, h);
            n += 1;
        }
        Ok(n)
    }

    fn lock_for(&self, id: &str) -> Arc<AsyncMutex<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    async fn hold(&self, id: &str) -> OwnedMutexGuard<()> {
        self.lock_for(id).lock_owned().await
    }

    pub async fn import_image(&self, image: &ImageRef) -> Result<ImageRef, FleetError> {
        let info = self.runtime.import_image(image).await.map_err(|e| FleetError::PullFailed(e.to_string()))?;
        let mut t = self.table.lock().unwrap();
        let recorded = t.images.get(&image.name).and_then(|i| i.digest.clone());
        for expected in [image.digest.clone(), recorded].into_iter().flatten() {
            if expected != info.digest {
                return Err(FleetError::DigestMismatch { expected, actual: info.digest });
            }
        }
        let out = ImageRef { digest: Some(info.digest), ..image.clone() };
        t.images.insert(image.name.clone(), out.clone());
        Ok(out)
    }

    /// Launches from an image or a snapshot.
    pub async fn launch(
        &self,
        origin: &Origin,
        labels: BTreeMap<String, String>,
    ) -> Result<ContainerHandle, FleetError> {
        match origin {
            Origin::Image { name } => {
                let known = self.table.lock().unwrap().images.contains_key(name);
                if !known && self.runtime.image_info(name).await?.is_none() {
                    return Err(FleetError::LaunchFailed(format!("image {name} not imported")));
                }
            }
            Origin::Snapshot { parent, name } => {
                let key = SnapshotKey { container: parent.clone(), name: name.clone() };
                if !self.table.lock().unwrap().snapshots.contains_key(&key) {
                    return Err(FleetError::LaunchFailed(format!("no snapshot {key}")));
                }
            }
            Origin::Container { .. } => return self.clone_instance(origin, labels).await,
        }
        self.provision(origin, labels).await.map_err(|e| match e {
            FleetError::Runtime(m) => FleetError::LaunchFailed(m),
            e => e,
        })
    }

    /// Copy of a container (running or stopped) or of a snapshot.
    pub async fn clone_instance(
        &self,
        origin: &Origin,
        labels: BTreeMap<String, String>,
    ) -> Result<ContainerHandle, FleetError> {
        let _src_guard = match origin {
            Origin::Container { id } => {
                let g = self.hold(id).await;
                match self.get(id) {
                    Some(h) if h.state.is_live() && h.state != ContainerState::Starting => {}
                    Some(h) => return Err(FleetError::CloneFailed(format!("{id} is {:?}", h.state))),
                    None => return Err(FleetError::CloneFailed(format!("no container {id}"))),
                }
                Some(g)
            }
            Origin::Snapshot { parent, name } => {
                let key = SnapshotKey { container: parent.clone(), name: name.clone() };
                if !self.table.lock().unwrap().snapshots.contains_key(&key) {
                    return Err(FleetError::CloneFailed(format!("no snapshot {key}")));
                }
                None
            }
            Origin::Image { .. } => return Err(FleetError::CloneFailed("clone needs a container or snapshot".into())),
        };
        self.provision(origin, labels).await.map_err(|e| match e {
            FleetError::Runtime(m) | FleetError::LaunchFailed(m) => FleetError::CloneFailed(m),
            e => e,
        })
    }

    async fn provision(
        &self,
        origin: &Origin,
        labels: BTreeMap<String, String>,
    ) -> Result<ContainerHandle, FleetError> {
        let id = new_id();
        let guard = self.hold(&id).await;
        let port = {
            let mut t = self.table.lock().unwrap();
            let port = t.ports.claim()?;
            t.port_of.insert(id.clone(), port);
            let h = ContainerHandle {
                id: id.clone(),
                origin: origin.clone(),
                state: ContainerState::Starting,
                endpoint: None,
                created_at_ms: now_ms(),
                labels: labels.clone(),
            };
            t.handles.insert(id.clone(), h);
            port
        };
        let spec = InstanceSpec {
            name: id.clone(),
            source: origin.source(),
            host_port: port,
            app_port: self.cfg.app_port,
            labels,
        };
        let endpoint = format!("{}:{port}", self.cfg.host);
        match self.boot(&spec, &endpoint).await {
            Ok(()) => {
                let mut t = self.table.lock().unwrap();
                t.handles.get_mut(&id).expect("own handle").endpoint = Some(endpoint);
                let h = t.set_state(&id, ContainerState::Running)?;
                debug!(container = %id, port, "running");
                drop(guard);
                Ok(h)
            }
            Err(e) => {
                warn!(container = %id, error = %e, "launch failed; rolling back");
                let _ = self.runtime.stop(&id).await;
                let _ = self.runtime.delete(&id).await;
                let mut t = self.table.lock().unwrap();
                t.handles.shift_remove(&id);
                t.port_of.remove(&id);
                t.ports.release(port);
                self.locks.lock().unwrap().remove(&id);
                Err(e)
            }
        }
    }

    async fn boot(&self, spec: &InstanceSpec, endpoint: &str) -> Result<(), FleetError> {
        self.runtime.create(spec).await?;
        self.runtime.start(&spec.name).await?;
        wait_healthy(self.probe.as_ref(), endpoint, self.cfg.health_timeout, self.backoff).await?;
        Ok(())
    }

    pub async fn snapshot(&self, id: &str, name: &str) -> Result<SnapshotRef, FleetError> {
        if !valid_snapshot_name(name) {
            return Err(FleetError::SnapshotFailed(format!("invalid snapshot name {name:?}")));
        }
        let _g = self.hold(id).await;
        let key = SnapshotKey { container: id.into(), name: name.into() };
        {
            let t = self.table.lock().unwrap();
            let h = t.handles.get(id).ok_or_else(|| FleetError::NotFound(id.into()))?;
            if !matches!(h.state, ContainerState::Running | ContainerState::Stopped) {
                return Err(FleetError::SnapshotFailed(format!("{id} is {:?}", h.state)));
            }
            if t.snapshots.contains_key(&key) {
                return Err(FleetError::NameCollision(key.to_string()));
            }
        }
        self.runtime.snapshot(id, name).await.map_err(|e| match e {
            RuntimeError::Conflict(k) => FleetError::NameCollision(k),
            e => FleetError::SnapshotFailed(e.to_string()),
        })?;
        let r = SnapshotRef { name: name.into(), parent: id.into(), created_at_ms: now_ms() };
        self.table.lock().unwrap().snapshots.insert(key, r.clone());
        Ok(r)
    }

    pub async fn delete_snapshot(&self, snap: &SnapshotRef) -> Result<(), FleetError> {
        let _g = self.hold(&snap.parent).await;
        if self.table.lock().unwrap().snapshots.remove(&snap.key()).is_none() {
            return Err(FleetError::NotFound(snap.key().to_string()));
        }
        self.runtime.delete_snapshot(&snap.key()).await?;
        Ok(())
    }

    /// Snapshots `h` may be reset to: its own, and the one it was cloned from.
    fn in_lineage(h: &ContainerHandle, to: &SnapshotRef) -> bool {
        to.parent == h.id || h.origin == Origin::snapshot(to)
    }

    pub async fn reset(&self, id: &str, to: &SnapshotRef) -> Result<ContainerHandle, FleetError> {
        let _g = self.hold(id).await;
        let endpoint = {
            let t = self.table.lock().unwrap();
            let h = t.handles.get(id).ok_or_else(|| FleetError::NotFound(id.into()))?;
            if !Self::in_lineage(h, to) {
                return Err(FleetError::ResetFailed(format!("{} is not in the lineage of {id}", to.key())));
            }
            if !t.snapshots.contains_key(&to.key()) {
                return Err(FleetError::ResetFailed(format!("snapshot {} no longer exists", to.key())));
            }
            if h.state != ContainerState::Running {
                return Err(FleetError::IllegalTransition { from: h.state, to: ContainerState::Running });
            }
            h.endpoint.clone().expect("running handle has an endpoint")
        };
        self.runtime.restore(id, &to.key()).await.map_err(|e| FleetError::ResetFailed(e.to_string()))?;
        wait_healthy(self.probe.as_ref(), &endpoint, self.cfg.health_timeout, self.backoff)
            .await
            .map_err(|e| FleetError::ResetFailed(e.to_string()))?;
        self.table.lock().unwrap().set_state(id, ContainerState::Running)
    }

    pub async fn stop(&self, id: &str) -> Result<ContainerHandle, FleetError> {
        let _g = self.hold(id).await;
        let state = self.get(id).ok_or_else(|| FleetError::NotFound(id.into()))?.state;
        if !state.can_transition(ContainerState::Stopped) {
            return Err(FleetError::IllegalTransition { from: state, to: ContainerState::Stopped });
        }
        self.runtime.stop(id).await?;
        self.table.lock().unwrap().set_state(id, ContainerState::Stopped)
    }

    /// Idempotent; unknown ids are an error, already-destroyed ones are not.
    pub async fn destroy(&self, id: &str) -> Result<ContainerHandle, FleetError> {
        let _g = self.hold(id).await;
        let h = self.get(id).ok_or_else(|| FleetError::NotFound(id.into()))?;
        if h.state == ContainerState::Destroyed {
            return Ok(h);
        }
        if h.state == ContainerState::Running {
            match self.runtime.stop(id).await {
                Ok(()) | Err(RuntimeError::NotFound(_)) => {}
                Err(e) => return Err(e.into()),
            }
            self.table.lock().unwrap().set_state(id, ContainerState::Stopped)?;
        }
        match self.runtime.delete(id).await {
            Ok(()) | Err(RuntimeError::NotFound(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let mut t = self.table.lock().unwrap();
        let h = t.set_state(id, ContainerState::Destroyed)?;
        if let Some(p) = t.port_of.remove(id) {
            t.ports.release(p);
        }
        t.snapshots.retain(|k, _| k.container != id);
        Ok(h)
    }

    pub fn get(&self, id: &str) -> Option<ContainerHandle> {
        self.table.lock().unwrap().handles.get(id).cloned()
    }

    pub fn list(&self, filter: &ListFilter) -> Vec<ContainerHandle> {
        self.table.lock().unwrap().handles.values().filter(|h| filter.matches(h)).cloned().collect()
    }

    pub fn live_count(&self) -> usize {
        self.list(&ListFilter::live()).len()
    }

    pub fn snapshots(&self) -> Vec<SnapshotRef> {
        self.table.lock().unwrap().snapshots.values().cloned().collect()
    }

    pub fn find_snapshot(&self, parent: &str, name: &str) -> Option<SnapshotRef> {
        let key = SnapshotKey { container: parent.into(), name: name.into() };
        self.table.lock().unwrap().snapshots.get(&key).cloned()
    }

    pub fn images(&self) -> Vec<ImageRef> {
        self.table.lock().unwrap().images.values().cloned().collect()
    }

    pub fn ports_in_use(&self) -> usize {
        self.table.lock().unwrap().ports.in_use()
    }

    /// Recent state transitions, oldest first.
    pub fn transitions(&self) -> Vec<Transition> {
        self.table.lock().unwrap().transitions.iter().cloned().collect()
    }

    /// Number of transitions that were requested and refused.
    pub fn refused_transitions(&self) -> usize {
        self.table.lock().unwrap().illegal
    }

    pub async fn health_check(&self, id: &str) -> Result<HealthStatus, FleetError> {
        let h = self.get(id).ok_or_else(|| FleetError::NotFound(id.into()))?;
        match (h.state, h.endpoint) {
            (ContainerState::Running, Some(ep)) => Ok(self.probe.check(&ep).await),
            (s, _) => Ok(HealthStatus::Unhealthy(format!("container is {s:?}"))),
        }
    }

    /// Launches `warmup + samples` containers one after another, keeps them
    /// all running, measures the last `samples`, then destroys them.
    pub async fn measure_launch(
        &self,
        origin: &Origin,
        warmup: usize,
        samples: usize,
    ) -> Result<LaunchSummary, FleetError> {
        if samples == 0 {
            return Err(FleetError::Config("samples must be at least 1".into()));
        }
        let labels = BTreeMap::from([(LABEL_ROLE.to_string(), "bench".to_string())]);
        let mut launched = Vec::new();
        let mut stats = Vec::new();
        let mut result = Ok(());
        for i in 0..warmup + samples {
            let before = self.runtime.storage_used().await?;
            let t0 = Instant::now();
            let h = match self.launch(origin, labels.clone()).await {
                Ok(h) => h,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            };
            let latency = t0.elapsed().as_secs_f64();
            let after = self.runtime.storage_used().await?;
            let memory = self.runtime.memory_usage(&h.id).await.unwrap_or(0);
            launched.push(h.id);
            if i >= warmup {
                stats.push(LaunchStats {
                    launch_latency_s: latency,
                    storage_delta_bytes: after.saturating_sub(before),
                    memory_rss_bytes: memory,
                });
            }
        }
        for id in &launched {
            if let Err(e) = self.destroy(id).await {
                warn!(container = %id, error = %e, "bench teardown failed");
            }
        }
        result?;
        let base = self.base_image_bytes(origin).await;
        Ok(LaunchSummary::new(origin.clone(), warmup, stats, base))
    }

    /// Latency of `n` consecutive resets of `id` to `to`, in seconds.
    pub async fn measure_reset(&self, id: &str, to: &SnapshotRef, n: usize) -> Result<Vec<f64>, FleetError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let t0 = Instant::now();
            self.reset(id, to).await?;
            out.push(t0.elapsed().as_secs_f64());
        }
        Ok(out)
    }

    /// Size of the image at the root of `origin`'s lineage, if known.
    async fn base_image_bytes(&self, origin: &Origin) -> Option<u64> {
        let mut o = origin.clone();
        for _ in 0..64 {
            let next = match &o {
                Origin::Image { name } => {
                    return self.runtime.image_info(name).await.ok().flatten().map(|i| i.size_bytes)
                }
                Origin::Snapshot { parent, .. } | Origin::Container { id: parent } => self.get(parent)?.origin,
            };
            o = next;
        }
        None
    }

    /// Destroys every live handle. Returns how many were torn down.
    pub async fn destroy_all(&self) -> usize {
        let ids: Vec<String> = self.list(&ListFilter::live()).into_iter().map(|h| h.id).collect();
        let results = futures::future::join_all(ids.iter().map(|id| self.destroy(id))).await;
        results.into_iter().filter(|r| r.is_ok()).count()
    }
}

pub fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
