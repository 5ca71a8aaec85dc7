//! In-process runtime with simulated latencies and storage accounting. It
//! also serves a small shop application per running instance, reachable by
//! the simulated browser at `http://<host>:<port>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use super::probe::{HealthProbe, HealthStatus};
use super::runtime::*;
use super::{now_ms, ImageRef};
use crate::driver::sim::{el, Effect, SimNode, SimPage, SimSite};

const MIB: u64 = 1 << 20;

pub const DEFAULT_IMAGE_REFERENCE: &str = "registry.local/webenv/shop:1";

/// Simulated costs, defaulting to a cold image launch and a copy-on-write
/// clone of the shopping site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FakeProfile {
    pub import_ms: u64,
    pub create_from_image_ms: u64,
    pub create_copy_ms: u64,
    pub start_ms: u64,
    pub stop_ms: u64,
    pub snapshot_ms: u64,
    pub restore_ms: u64,
    pub delete_ms: u64,
    pub image_bytes: u64,
    /// Bytes written by an image launch; a full unpack without CoW.
    pub image_launch_bytes: u64,
    /// Bytes written by a clone from a snapshot or instance.
    pub clone_bytes: u64,
    pub snapshot_bytes: u64,
    pub memory_bytes: u64,
}

impl Default for FakeProfile {
    fn default() -> Self {
        FakeProfile {
            import_ms: 4_000,
            create_from_image_ms: 8_700,
            create_copy_ms: 1_500,
            start_ms: 250,
            stop_ms: 100,
            snapshot_ms: 150,
            restore_ms: 600,
            delete_ms: 100,
            image_bytes: 6_780 * MIB,
            image_launch_bytes: 6_780 * MIB,
            clone_bytes: 28 * MIB,
            snapshot_bytes: MIB,
            memory_bytes: 1_740 * MIB,
        }
    }
}

impl FakeProfile {
    /// Same costs with every latency multiplied by `f`.
    pub fn scaled(mut self, f: f64) -> Self {
        for ms in [
            &mut self.import_ms,
            &mut self.create_from_image_ms,
            &mut self.create_copy_ms,
            &mut self.start_ms,
            &mut self.stop_ms,
            &mut self.snapshot_ms,
            &mut self.restore_ms,
            &mut self.delete_ms,
        ] {
            *ms = (*ms as f64 * f).round() as u64;
        }
        self
    }

    /// No latency at all.
    pub fn instant() -> Self {
        Self::default().scaled(0.0)
    }
}

type AppState = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FakeImage {
    digest: String,
    size: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FakeSnapshot {
    app: AppState,
    created_at_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FakeInstance {
    running: bool,
    host_port: u16,
    labels: BTreeMap<String, String>,
    source: InstanceSource,
    app: AppState,
    snapshots: BTreeMap<String, FakeSnapshot>,
    bytes: u64,
    created_at_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FakeState {
    registry: BTreeMap<String, u64>,
    images: BTreeMap<String, FakeImage>,
    instances: BTreeMap<String, FakeInstance>,
    #[serde(default)]
    fail_next: BTreeSet<String>,
    #[serde(default)]
    wedged: BTreeSet<String>,
}

pub struct FakeRuntime {
    profile: FakeProfile,
    state: Mutex<FakeState>,
}

fn digest_of(reference: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(reference.as_bytes())))
}

impl Default for FakeRuntime {
    fn default() -> Self {
        Self::new(FakeProfile::default())
    }
}

impl FakeRuntime {
    /// A runtime whose registry holds the demo shop image.
    pub fn new(profile: FakeProfile) -> Self {
        let rt = FakeRuntime { profile, state: Mutex::new(FakeState::default()) };
        rt.publish(DEFAULT_IMAGE_REFERENCE);
        rt
    }

    /// Makes `reference` pullable.
    pub fn publish(&self, reference: &str) {
        let size = self.profile.image_bytes;
        self.state.lock().unwrap().registry.insert(reference.to_string(), size);
    }

    pub fn profile(&self) -> &FakeProfile {
        &self.profile
    }

    /// The next call of `op` (e.g. "create", "start", "snapshot") fails.
    pub fn fail_next(&self, op: &str) {
        self.state.lock().unwrap().fail_next.insert(op.to_string());
    }

    /// A wedged instance runs but never answers health probes.
    pub fn wedge(&self, name: &str) {
        self.state.lock().unwrap().wedged.insert(name.to_string());
    }

    fn injected(&self, op: &str) -> Result<(), RuntimeError> {
        if self.state.lock().unwrap().fail_next.remove(op) {
            return Err(RuntimeError::Failed(format!("injected {op} failure")));
        }
        Ok(())
    }

    async fn pause(ms: u64) {
        if ms > 0 {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let s = self.state.lock().unwrap();
        std::fs::write(path, serde_json::to_vec_pretty(&*s)?)
    }

    /// Restores state written by `save`; a missing file leaves a fresh runtime.
    pub fn load(profile: FakeProfile, path: &Path) -> std::io::Result<Self> {
        let rt = Self::new(profile);
        match std::fs::read(path) {
            Ok(bytes) => {
                let s: FakeState = serde_json::from_slice(&bytes).map_err(std::io::Error::other)?;
                *rt.state.lock().unwrap() = s;
                Ok(rt)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(rt),
            Err(e) => Err(e),
        }
    }

    fn by_port<R>(&self, port: u16, f: impl FnOnce(&str, &mut FakeInstance) -> R) -> Option<R> {
        let mut s = self.state.lock().unwrap();
        let (name, inst) = s.instances.iter_mut().find(|(_, i)| i.running && i.host_port == port)?;
        Some(f(name, inst))
    }

    /// Application state served at `port`, if something is running there.
    pub fn app_state(&self, port: u16) -> Option<BTreeMap<String, String>> {
        self.by_port(port, |_, i| i.app.clone())
    }

    /// Writes one row through the application at `port`.
    pub fn app_write(&self, port: u16, key: &str, value: &str) -> bool {
        self.by_port(port, |_, i| i.app.insert(key.into(), value.into())).is_some()
    }

    pub fn instance_names(&self) -> Vec<String> {
        self.state.lock().unwrap().instances.keys().cloned().collect()
    }
}

#[async_trait]
impl RuntimeClient for FakeRuntime {
    fn kind(&self) -> &'static str {
        "fake"
    }

    async fn import_image(&self, image: &ImageRef) -> Result<ImageInfo, RuntimeError> {
        self.injected("import")?;
        let size = {
            let s = self.state.lock().unwrap();
            if let Some(img) = s.images.get(&image.name) {
                return Ok(ImageInfo { name: image.name.clone(), digest: img.digest.clone(), size_bytes: img.size });
            }
            *s.registry.get(&image.reference).ok_or_else(|| RuntimeError::NotFound(image.reference.clone()))?
        };
        Self::pause(self.profile.import_ms).await;
        let digest = digest_of(&image.reference);
        let mut s = self.state.lock().unwrap();
        let img = s.images.entry(image.name.clone()).or_insert(FakeImage { digest, size });
        Ok(ImageInfo { name: image.name.clone(), digest: img.digest.clone(), size_bytes: img.size })
    }

    async fn image_info(&self, name: &str) -> Result<Option<ImageInfo>, RuntimeError> {
        let s = self.state.lock().unwrap();
        Ok(s.images.get(name).map(|i| ImageInfo { name: name.into(), digest: i.digest.clone(), size_bytes: i.size }))
    }

    async fn create(&self, spec: &InstanceSpec) -> Result<(), RuntimeError> {
        self.injected("create")?;
        let (app, ms, bytes) = {
            let s = self.state.lock().unwrap();
            if s.instances.contains_key(&spec.name) {
                return Err(RuntimeError::Conflict(spec.name.clone()));
            }
            match &spec.source {
                InstanceSource::Image { alias } => {
                    if !s.images.contains_key(alias) {
                        return Err(RuntimeError::NotFound(format!("image {alias}")));
                    }
                    (AppState::new(), self.profile.create_from_image_ms, self.profile.image_launch_bytes)
                }
                InstanceSource::Snapshot { key } => {
                    let snap = s
                        .instances
                        .get(&key.container)
                        .and_then(|i| i.snapshots.get(&key.name))
                        .ok_or_else(|| RuntimeError::NotFound(format!("snapshot {key}")))?;
                    (snap.app.clone(), self.profile.create_copy_ms, self.profile.clone_bytes)
                }
                InstanceSource::Instance { name } => {
                    let src = s.instances.get(name).ok_or_else(|| RuntimeError::NotFound(name.clone()))?;
                    (src.app.clone(), self.profile.create_copy_ms, self.profile.clone_bytes)
                }
            }
        };
        Self::pause(ms).await;
        let mut s = self.state.lock().unwrap();
        if s.instances.contains_key(&spec.name) {
            return Err(RuntimeError::Conflict(spec.name.clone()));
        }
        s.instances.insert(
            spec.name.clone(),
            FakeInstance {
                running: false,
                host_port: spec.host_port,
                labels: spec.labels.clone(),
                source: spec.source.clone(),
                app,
                snapshots: BTreeMap::new(),
                bytes,
                created_at_ms: now_ms(),
            },
        );
        Ok(())
    }

    async fn start(&self, name: &str) -> Result<(), RuntimeError> {
        self.injected("start")?;
        Self::pause(self.profile.start_ms).await;
        let mut s = self.state.lock().unwrap();
        let i = s.instances.get_mut(name).ok_or_else(|| RuntimeError::NotFound(name.into()))?;
        i.running = true;
        Ok(())
    }

    async fn stop(&self, name: &str) -> Result<(), RuntimeError> {
        Self::pause(self.profile.stop_ms).await;
        let mut s = self.state.lock().unwrap();
        let i = s.instances.get_mut(name).ok_or_else(|| RuntimeError::NotFound(name.into()))?;
        i.running = false;
        Ok(())
    }

    async fn delete(&self, name: &str) -> Result<(), RuntimeError> {
        Self::pause(self.profile.delete_ms).await;
        let mut s = self.state.lock().unwrap();
        s.wedged.remove(name);
        match s.instances.remove(name) {
            Some(_) => Ok(()),
            None => Err(RuntimeError::NotFound(name.into())),
        }
    }

    async fn snapshot(&self, name: &str, snapshot: &str) -> Result<(), RuntimeError> {
        self.injected("snapshot")?;
        Self::pause(self.profile.snapshot_ms).await;
        let bytes = self.profile.snapshot_bytes;
        let mut s = self.state.lock().unwrap();
        let i = s.instances.get_mut(name).ok_or_else(|| RuntimeError::NotFound(name.into()))?;
        if i.snapshots.contains_key(snapshot) {
            return Err(RuntimeError::Conflict(format!("{name}/{snapshot}")));
        }
        let snap = FakeSnapshot { app: i.app.clone(), created_at_ms: now_ms() };
        i.snapshots.insert(snapshot.to_string(), snap);
        i.bytes += bytes;
        Ok(())
    }

    async fn restore(&self, name: &str, snapshot: &SnapshotKey) -> Result<(), RuntimeError> {
        self.injected("restore")?;
        Self::pause(self.profile.restore_ms).await;
        let mut s = self.state.lock().unwrap();
        let app = s
            .instances
            .get(&snapshot.container)
            .and_then(|i| i.snapshots.get(&snapshot.name))
            .map(|snap| snap.app.clone())
            .ok_or_else(|| RuntimeError::NotFound(format!("snapshot {snapshot}")))?;
        let i = s.instances.get_mut(name).ok_or_else(|| RuntimeError::NotFound(name.into()))?;
        i.app = app;
        Ok(())
    }

    async fn delete_snapshot(&self, key: &SnapshotKey) -> Result<(), RuntimeError> {
        let mut s = self.state.lock().unwrap();
        let i = s.instances.get_mut(&key.container).ok_or_else(|| RuntimeError::NotFound(key.container.clone()))?;
        i.snapshots.remove(&key.name).map(|_| ()).ok_or_else(|| RuntimeError::NotFound(key.to_string()))
    }

    async fn list_instances(&self) -> Result<Vec<InstanceInfo>, RuntimeError> {
        let s = self.state.lock().unwrap();
        Ok(s.instances
            .iter()
            .map(|(name, i)| InstanceInfo {
                name: name.clone(),
                running: i.running,
                host_port: Some(i.host_port),
                labels: i.labels.clone(),
                source: Some(i.source.clone()),
                snapshots: i
                    .snapshots
                    .iter()
                    .map(|(n, snap)| SnapshotInfo { name: n.clone(), created_at_ms: snap.created_at_ms })
                    .collect(),
                created_at_ms: i.created_at_ms,
            })
            .collect())
    }

    async fn storage_used(&self) -> Result<u64, RuntimeError> {
        let s = self.state.lock().unwrap();
        Ok(s.images.values().map(|i| i.size).sum::<u64>() + s.instances.values().map(|i| i.bytes).sum::<u64>())
    }

    async fn memory_usage(&self, name: &str) -> Result<u64, RuntimeError> {
        let s = self.state.lock().unwrap();
        let i = s.instances.get(name).ok_or_else(|| RuntimeError::NotFound(name.into()))?;
        Ok(if i.running { self.profile.memory_bytes } else { 0 })
    }
}

#[async_trait]
impl HealthProbe for FakeRuntime {
    async fn check(&self, endpoint: &str) -> HealthStatus {
        let Some(port) = endpoint.rsplit_once(':').and_then(|(_, p)| p.parse::<u16>().ok()) else {
            return HealthStatus::Unhealthy(format!("bad endpoint {endpoint}"));
        };
        let s = self.state.lock().unwrap();
        match s.instances.iter().find(|(_, i)| i.running && i.host_port == port) {
            Some((name, _)) if s.wedged.contains(name) => HealthStatus::Unhealthy("connection reset".into()),
            Some(_) => HealthStatus::Healthy,
            None => HealthStatus::Unhealthy("connection refused".into()),
        }
    }
}

pub const PRODUCTS: [&str; 3] = ["Mug", "Shirt", "Lamp"];

fn shop_home(app: &AppState) -> SimPage {
    let cart = app.keys().filter(|k| k.starts_with("cart:")).count();
    let mut page = SimPage::new("Shop")
        .with(el("h1").text("Shop"))
        .with(el("a").attr("href", "/cart").text(&format!("Cart ({cart})")));
    for p in PRODUCTS {
        let key = format!("cart:{}", p.to_lowercase());
        page = page.with(el("div").attr("class", "product").child(el("h2").text(p)).child(
            el("button").text(&format!("Add {p}")).on_click(Effect::fetch(
                80,
                [Effect::Post { key, value: "1".into() }, Effect::Navigate { url: "/cart".into() }],
            )),
        ));
    }
    page
}

fn shop_cart(app: &AppState) -> SimPage {
    let items: Vec<SimNode> = app.keys().filter_map(|k| k.strip_prefix("cart:")).map(|p| el("li").text(p)).collect();
    let mut page = SimPage::new("Cart").with(el("h1").text("Cart"));
    page = if items.is_empty() {
        page.with(el("p").text("Cart is empty"))
    } else {
        page.with(el("ul").id("cart").children(items))
    };
    for (k, v) in app.iter().filter(|(k, _)| !k.starts_with("cart:")) {
        page = page.with(el("p").attr("class", "row").text(&format!("{k}: {v}")));
    }
    page.with(el("a").attr("href", "/").text("Continue shopping"))
}

impl SimSite for FakeRuntime {
    fn load(&self, url: &Url) -> Option<SimPage> {
        let app = self.app_state(url.port()?)?;
        match url.path() {
            "/" => Some(shop_home(&app)),
            "/cart" => Some(shop_cart(&app)),
            _ => None,
        }
    }

    fn post(&self, url: &Url, key: &str, value: &str) -> bool {
        url.port().is_some_and(|p| self.app_write(p, key, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, port: u16, source: InstanceSource) -> InstanceSpec {
        InstanceSpec { name: name.into(), source, host_port: port, app_port: 80, labels: BTreeMap::new() }
    }

    fn shop() -> ImageRef {
        ImageRef { reference: DEFAULT_IMAGE_REFERENCE.into(), ..ImageRef::local("shop") }
    }

    #[tokio::test(start_paused = true)]
    async fn storage_accounting() {
        let rt = FakeRuntime::default();
        let a = rt.import_image(&shop()).await.unwrap();
        let base = rt.storage_used().await.unwrap();
        assert_eq!(base, a.size_bytes);
        assert_eq!(rt.import_image(&shop()).await.unwrap(), a);
        assert_eq!(rt.storage_used().await.unwrap(), base, "re-import is free");

        rt.create(&spec("a", 1, InstanceSource::Image { alias: "shop".into() })).await.unwrap();
        rt.snapshot("a", "s").await.unwrap();
        let before = rt.storage_used().await.unwrap();
        let key = SnapshotKey { container: "a".into(), name: "s".into() };
        rt.create(&spec("b", 2, InstanceSource::Snapshot { key })).await.unwrap();
        let delta = rt.storage_used().await.unwrap() - before;
        assert!((delta as f64) < 0.05 * a.size_bytes as f64);
    }

    #[tokio::test(start_paused = true)]
    async fn snapshot_restore_and_isolation() {
        let rt = FakeRuntime::new(FakeProfile::instant());
        rt.import_image(&shop()).await.unwrap();
        rt.create(&spec("a", 7001, InstanceSource::Image { alias: "shop".into() })).await.unwrap();
        rt.start("a").await.unwrap();
        rt.snapshot("a", "clean").await.unwrap();
        assert!(rt.app_write(7001, "marker", "x"));
        let key = SnapshotKey { container: "a".into(), name: "clean".into() };
        rt.create(&spec("b", 7002, InstanceSource::Snapshot { key: key.clone() })).await.unwrap();
        rt.start("b").await.unwrap();
        assert!(rt.app_state(7002).unwrap().is_empty());
        rt.restore("a", &key).await.unwrap();
        assert!(rt.app_state(7001).unwrap().is_empty());
        assert_eq!(rt.check("127.0.0.1:7002").await, HealthStatus::Healthy);
        rt.stop("b").await.unwrap();
        assert!(matches!(rt.check("127.0.0.1:7002").await, HealthStatus::Unhealthy(_)));
    }

    #[tokio::test(start_paused = true)]
    async fn unknown_reference_and_injected_failures() {
        let rt = FakeRuntime::default();
        let bad = ImageRef { reference: "registry.local/missing:0".into(), ..ImageRef::local("x") };
        assert!(matches!(rt.import_image(&bad).await, Err(RuntimeError::NotFound(_))));
        rt.fail_next("import");
        assert!(rt.import_image(&shop()).await.is_err());
        assert!(rt.import_image(&shop()).await.is_ok());
    }

    #[tokio::test(start_paused = true)]
    async fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.json");
        let rt = FakeRuntime::new(FakeProfile::instant());
        rt.import_image(&shop()).await.unwrap();
        rt.create(&spec("a", 9, InstanceSource::Image { alias: "shop".into() })).await.unwrap();
        rt.save(&path).unwrap();
        let back = FakeRuntime::load(FakeProfile::instant(), &path).unwrap();
        assert_eq!(back.list_instances().await.unwrap(), rt.list_instances().await.unwrap());
        assert_eq!(back.storage_used().await.unwrap(), rt.storage_used().await.unwrap());
    }

    #[tokio::test(start_paused = true)]
    async fn shop_pages_reflect_state() {
        let rt = FakeRuntime::new(FakeProfile::instant());
        rt.import_image(&shop()).await.unwrap();
        rt.create(&spec("a", 8080, InstanceSource::Image { alias: "shop".into() })).await.unwrap();
        let url = Url::parse("http://127.0.0.1:8080/cart").unwrap();
        assert!(rt.load(&url).is_none(), "not serving until started");
        rt.start("a").await.unwrap();
        assert_eq!(rt.load(&url).unwrap().title, "Cart");
        assert!(rt.post(&url, "cart:mug", "1"));
        assert_eq!(rt.app_state(8080).unwrap().get("cart:mug").map(String::as_str), Some("1"));
    }
}
