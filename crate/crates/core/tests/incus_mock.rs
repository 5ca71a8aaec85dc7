//! IncusClient against an in-memory server speaking the same REST surface
//! over a Unix socket.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::UnixListener;

use webenv_core::fleet::incus::IncusClient;
use webenv_core::fleet::*;

const REGISTRY: &str = "https://registry.test";
const IMAGE_SIZE: u64 = 6_000_000_000;

#[derive(Default, Clone)]
struct Inst {
    status: String,
    config: Value,
    devices: Value,
    data: BTreeMap<String, String>,
    snapshots: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Default)]
struct Mock {
    aliases: BTreeMap<String, String>,
    instances: BTreeMap<String, Inst>,
    ops: BTreeMap<String, Result<Value, String>>,
    used: u64,
    requests: Vec<(String, String, Value)>,
}

type Shared = Arc<Mutex<Mock>>;

fn sync(md: Value) -> Response {
    Json(json!({ "type": "sync", "status_code": 200, "metadata": md })).into_response()
}

fn error(code: u16, msg: &str) -> Response {
    let status = StatusCode::from_u16(code).unwrap();
    (status, Json(json!({ "type": "error", "error_code": code, "error": msg }))).into_response()
}

fn op(m: &mut Mock, result: Result<Value, String>) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    m.ops.insert(id.clone(), result);
    let body = json!({ "type": "async", "status_code": 100, "operation": format!("/1.0/operations/{id}") });
    (StatusCode::ACCEPTED, Json(body)).into_response()
}

async fn wait(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let m = s.lock().unwrap();
    match m.ops.get(&id) {
        Some(Ok(md)) => sync(json!({ "id": id, "status": "Success", "err": "", "metadata": md })),
        Some(Err(e)) => sync(json!({ "id": id, "status": "Failure", "err": e, "metadata": null })),
        None => error(404, "operation not found"),
    }
}

async fn alias(State(s): State<Shared>, Path(name): Path<String>) -> Response {
    match s.lock().unwrap().aliases.get(&name) {
        Some(fp) => sync(json!({ "name": name, "target": fp })),
        None => error(404, "Image alias not found"),
    }
}

async fn image(State(s): State<Shared>, Path(fp): Path<String>) -> Response {
    if s.lock().unwrap().aliases.values().any(|f| *f == fp) {
        sync(json!({ "fingerprint": fp, "size": IMAGE_SIZE }))
    } else {
        error(404, "Image not found")
    }
}

async fn pull(State(s): State<Shared>, Json(b): Json<Value>) -> Response {
    let mut m = s.lock().unwrap();
    m.requests.push(("POST".into(), "/1.0/images".into(), b.clone()));
    let src = &b["source"];
    if src["server"] != REGISTRY || src["protocol"] != "oci" {
        return op(&mut m, Err("Image not found in registry".into()));
    }
    let fp = format!("{:0>64}", src["alias"].as_str().unwrap().len());
    for a in b["aliases"].as_array().unwrap() {
        m.aliases.insert(a["name"].as_str().unwrap().into(), fp.clone());
    }
    m.used += IMAGE_SIZE;
    op(&mut m, Ok(json!({ "fingerprint": fp })))
}

async fn list(State(s): State<Shared>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    assert_eq!(q.get("recursion").map(String::as_str), Some("2"));
    let m = s.lock().unwrap();
    let all: Vec<Value> = m.instances.iter().map(|(n, i)| render(n, i)).collect();
    sync(Value::Array(all))
}

fn render(name: &str, i: &Inst) -> Value {
    let snaps: Vec<Value> = i
        .snapshots
        .keys()
        .map(|s| json!({ "name": format!("{name}/{s}"), "created_at": "2026-03-01T00:00:00Z" }))
        .collect();
    json!({ "name": name, "status": i.status, "config": i.config, "devices": i.devices, "snapshots": snaps, "created_at": "2026-03-01T00:00:00Z" })
}

async fn create(State(s): State<Shared>, Json(b): Json<Value>) -> Response {
    let mut m = s.lock().unwrap();
    m.requests.push(("POST".into(), "/1.0/instances".into(), b.clone()));
    let name = b["name"].as_str().unwrap().to_string();
    if m.instances.contains_key(&name) {
        return op(&mut m, Err(format!("Instance \"{name}\" already exists")));
    }
    let src = &b["source"];
    let data = match src["type"].as_str() {
        Some("image") if m.aliases.contains_key(src["alias"].as_str().unwrap()) => BTreeMap::new(),
        Some("copy") => {
            let from = src["source"].as_str().unwrap();
            let found = match from.split_once('/') {
                Some((c, snap)) => m.instances.get(c).and_then(|i| i.snapshots.get(snap)).cloned(),
                None => m.instances.get(from).map(|i| i.data.clone()),
            };
            match found {
                Some(d) => d,
                None => return op(&mut m, Err(format!("Source \"{from}\" not found"))),
            }
        }
        _ => return op(&mut m, Err("Image not found".into())),
    };
    m.used += 28 << 20;
    let inst = Inst {
        status: "Stopped".into(),
        config: b["config"].clone(),
        devices: b["devices"].clone(),
        data,
        ..Default::default()
    };
    m.instances.insert(name, inst);
    op(&mut m, Ok(Value::Null))
}

async fn instance_get(State(s): State<Shared>, Path(name): Path<String>) -> Response {
    match s.lock().unwrap().instances.get(&name) {
        Some(i) => sync(render(&name, i)),
        None => error(404, "Instance not found"),
    }
}

async fn instance_put(State(s): State<Shared>, Path(name): Path<String>, Json(b): Json<Value>) -> Response {
    let mut m = s.lock().unwrap();
    let Some(i) = m.instances.get_mut(&name) else { return error(404, "Instance not found") };
    let snap = b["restore"].as_str().unwrap();
    match i.snapshots.get(snap).cloned() {
        Some(d) => {
            i.data = d;
            op(&mut m, Ok(Value::Null))
        }
        None => op(&mut m, Err("Snapshot not found".into())),
    }
}

async fn instance_delete(State(s): State<Shared>, Path(name): Path<String>) -> Response {
    let mut m = s.lock().unwrap();
    match m.instances.get(&name) {
        None => error(404, "Instance not found"),
        Some(i) if i.status == "Running" => op(&mut m, Err("Instance is running".into())),
        Some(_) => {
            m.instances.remove(&name);
            m.used -= 28 << 20;
            op(&mut m, Ok(Value::Null))
        }
    }
}

async fn state_put(State(s): State<Shared>, Path(name): Path<String>, Json(b): Json<Value>) -> Response {
    let mut m = s.lock().unwrap();
    let Some(i) = m.instances.get_mut(&name) else { return error(404, "Instance not found") };
    i.status = if b["action"] == "start" { "Running".into() } else { "Stopped".into() };
    op(&mut m, Ok(Value::Null))
}

async fn state_get(State(s): State<Shared>, Path(name): Path<String>) -> Response {
    match s.lock().unwrap().instances.get(&name) {
        Some(i) => sync(
            json!({ "status": i.status, "memory": { "usage": if i.status == "Running" { 1_800_000_000u64 } else { 0 } } }),
        ),
        None => error(404, "Instance not found"),
    }
}

async fn snap_create(State(s): State<Shared>, Path(name): Path<String>, Json(b): Json<Value>) -> Response {
    let mut m = s.lock().unwrap();
    let Some(i) = m.instances.get_mut(&name) else { return error(404, "Instance not found") };
    let snap = b["name"].as_str().unwrap().to_string();
    if i.snapshots.contains_key(&snap) {
        return op(&mut m, Err("Snapshot already exists".into()));
    }
    let d = i.data.clone();
    i.snapshots.insert(snap, d);
    op(&mut m, Ok(Value::Null))
}

async fn snap_get(State(s): State<Shared>, Path((name, snap)): Path<(String, String)>) -> Response {
    match s.lock().unwrap().instances.get(&name).filter(|i| i.snapshots.contains_key(&snap)) {
        Some(_) => sync(json!({ "name": snap })),
        None => error(404, "Snapshot not found"),
    }
}

async fn snap_delete(State(s): State<Shared>, Path((name, snap)): Path<(String, String)>) -> Response {
    let mut m = s.lock().unwrap();
    match m.instances.get_mut(&name).and_then(|i| i.snapshots.remove(&snap)) {
        Some(_) => op(&mut m, Ok(Value::Null)),
        None => error(404, "Snapshot not found"),
    }
}

async fn pool(State(s): State<Shared>, Path(p): Path<String>) -> Response {
    if p != "tank" {
        return error(404, "Storage pool not found");
    }
    sync(json!({ "space": { "used": s.lock().unwrap().used, "total": 1u64 << 40 } }))
}

async fn serve() -> (tempfile::TempDir, std::path::PathBuf, Shared) {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("incus.sock");
    let state: Shared = Arc::default();
    let app = Router::new()
        .route("/1.0/operations/{id}/wait", get(wait))
        .route("/1.0/images", post(pull))
        .route("/1.0/images/aliases/{name}", get(alias))
        .route("/1.0/images/{fp}", get(image))
        .route("/1.0/instances", get(list).post(create))
        .route("/1.0/instances/{name}", get(instance_get).put(instance_put).delete(instance_delete))
        .route("/1.0/instances/{name}/state", put(state_put).get(state_get))
        .route("/1.0/instances/{name}/snapshots", post(snap_create))
        .route("/1.0/instances/{name}/snapshots/{snap}", get(snap_get).delete(snap_delete))
        .route("/1.0/storage-pools/{pool}/resources", get(pool))
        .with_state(state.clone());
    let listener = UnixListener::bind(&sock).unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (dir, sock, state)
}

struct AlwaysUp;

#[async_trait::async_trait]
impl HealthProbe for AlwaysUp {
    async fn check(&self, _: &str) -> HealthStatus {
        HealthStatus::Healthy
    }
}

fn manager(sock: &std::path::Path) -> FleetManager {
    let cfg = FleetConfig { socket: sock.to_path_buf(), storage_pool: "tank".into(), ..Default::default() };
    let rt = Arc::new(IncusClient::new(&cfg.socket, &cfg.storage_pool));
    FleetManager::new(rt, Arc::new(AlwaysUp), cfg).unwrap()
}

fn shop() -> ImageRef {
    ImageRef {
        name: "shop".into(),
        source: ImageSource::OciRegistry,
        reference: "registry.test/webarena/shop:1".into(),
        digest: None,
    }
}

fn web() -> BTreeMap<String, String> {
    labels(&[(LABEL_ROLE, "web-server")])
}

#[tokio::test]
async fn lifecycle_over_the_socket() {
    let (_dir, sock, mock) = serve().await;
    let m = manager(&sock);

    let img = m.import_image(&shop()).await.unwrap();
    assert!(img.digest.as_deref().unwrap().starts_with("sha256:"));
    let used = m.runtime().storage_used().await.unwrap();
    assert_eq!(m.import_image(&shop()).await.unwrap().digest, img.digest);
    assert_eq!(m.runtime().storage_used().await.unwrap(), used, "re-import pulls nothing");
    let pull = mock.lock().unwrap().requests.iter().filter(|r| r.1 == "/1.0/images").count();
    assert_eq!(pull, 1);

    let bad = ImageRef { reference: "elsewhere.example/x:1".into(), name: "x".into(), ..shop() };
    assert!(matches!(m.import_image(&bad).await, Err(FleetError::PullFailed(_))));

    let base = m.launch(&Origin::image("shop"), web()).await.unwrap();
    let port = base.port().unwrap();
    {
        let mm = mock.lock().unwrap();
        let i = &mm.instances[&base.id];
        assert_eq!(i.status, "Running");
        assert_eq!(i.devices["webenv-http"]["listen"], format!("tcp:0.0.0.0:{port}"));
    }
    let snap = m.snapshot(&base.id, "initial").await.unwrap();
    assert!(matches!(m.snapshot(&base.id, "initial").await, Err(FleetError::NameCollision(_))));

    let clone = m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    mock.lock().unwrap().instances.get_mut(&clone.id).unwrap().data.insert("cart".into(), "mug".into());

    // Parent snapshot: rebuilt under the same name and port.
    let back = m.reset(&clone.id, &snap).await.unwrap();
    assert_eq!(back.endpoint, clone.endpoint);
    {
        let mm = mock.lock().unwrap();
        let i = &mm.instances[&clone.id];
        assert!(i.data.is_empty());
        assert_eq!(i.status, "Running");
        assert_eq!(i.devices["webenv-http"]["listen"], format!("tcp:0.0.0.0:{}", clone.port().unwrap()));
    }

    // Own snapshot: restored in place.
    let own = m.snapshot(&clone.id, "mine").await.unwrap();
    mock.lock().unwrap().instances.get_mut(&clone.id).unwrap().data.insert("row".into(), "1".into());
    m.reset(&clone.id, &own).await.unwrap();
    assert!(mock.lock().unwrap().instances[&clone.id].data.is_empty());
    assert!(matches!(m.reset(&base.id, &own).await, Err(FleetError::ResetFailed(_))));

    let fresh = manager(&sock);
    assert_eq!(fresh.recover().await.unwrap(), 2);
    let h = fresh.get(&clone.id).unwrap();
    assert_eq!((h.state, &h.endpoint, &h.origin), (ContainerState::Running, &clone.endpoint, &Origin::snapshot(&snap)));
    assert!(fresh.find_snapshot(&clone.id, "mine").is_some());

    assert!(m.runtime().memory_usage(&clone.id).await.unwrap() > 0);
    m.destroy(&clone.id).await.unwrap();
    m.destroy(&clone.id).await.unwrap();
    m.destroy(&base.id).await.unwrap();
    assert!(mock.lock().unwrap().instances.is_empty());
    assert_eq!(m.live_count(), 0);
}

#[tokio::test]
async fn runtime_errors_map_to_fleet_errors() {
    let (_dir, sock, _mock) = serve().await;
    let m = manager(&sock);
    let ghost = Origin::Snapshot { parent: "nobody".into(), name: "s".into() };
    assert!(matches!(m.launch(&ghost, web()).await, Err(FleetError::LaunchFailed(_))));
    assert!(matches!(m.launch(&Origin::image("never-imported"), web()).await, Err(FleetError::LaunchFailed(_))));
    assert_eq!(m.live_count(), 0);
    assert_eq!(m.ports_in_use(), 0);
}
