use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use webenv_core::fleet::fake::{FakeProfile, FakeRuntime, DEFAULT_IMAGE_REFERENCE};
use webenv_core::fleet::*;

fn shop() -> ImageRef {
    ImageRef {
        name: "shop".into(),
        source: ImageSource::OciRegistry,
        reference: DEFAULT_IMAGE_REFERENCE.into(),
        digest: None,
    }
}

async fn fleet(profile: FakeProfile, range: PortRange) -> (Arc<FakeRuntime>, Arc<FleetManager>) {
    let rt = Arc::new(FakeRuntime::new(profile));
    let cfg = FleetConfig { port_range: range, ..Default::default() };
    let m = Arc::new(FleetManager::new(rt.clone(), rt.clone(), cfg).unwrap());
    m.import_image(&shop()).await.unwrap();
    (rt, m)
}

fn web() -> BTreeMap<String, String> {
    labels(&[(LABEL_ROLE, "web-server")])
}

async fn base_snapshot(m: &FleetManager) -> SnapshotRef {
    let base = m.launch(&Origin::image("shop"), web()).await.unwrap();
    m.snapshot(&base.id, "initial").await.unwrap()
}

#[tokio::test(start_paused = true)]
async fn two_hundred_concurrent_launches() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange { start: 30000, end: 30299 }).await;
    let snap = base_snapshot(&m).await;
    let before = m.live_count();
    let tasks: Vec<_> = (0..200)
        .map(|_| {
            let m = m.clone();
            let o = Origin::snapshot(&snap);
            tokio::spawn(async move { m.launch(&o, web()).await })
        })
        .collect();
    let mut handles = Vec::new();
    for t in tasks {
        handles.push(t.await.unwrap().unwrap());
    }
    let ports: HashSet<_> = handles.iter().map(|h| h.port().unwrap()).collect();
    assert_eq!(ports.len(), 200);
    assert!(handles.iter().all(|h| h.state == ContainerState::Running));
    assert!(ports.iter().all(|p| (30000..=30299).contains(p)));

    let teardown: Vec<_> = handles
        .iter()
        .map(|h| {
            let m = m.clone();
            let id = h.id.clone();
            tokio::spawn(async move { m.destroy(&id).await })
        })
        .collect();
    for t in teardown {
        assert_eq!(t.await.unwrap().unwrap().state, ContainerState::Destroyed);
    }
    assert_eq!(m.live_count(), before);
    assert_eq!(m.ports_in_use(), before);
    assert_eq!(rt.instance_names().len(), before);
    assert_eq!(m.refused_transitions(), 0);
    assert!(m.transitions().iter().all(|t| t.from.can_transition(t.to)));
}

#[tokio::test(start_paused = true)]
async fn snapshot_mutate_restore() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let h = m.launch(&Origin::image("shop"), web()).await.unwrap();
    let snap = m.snapshot(&h.id, "clean").await.unwrap();
    let port = h.port().unwrap();
    rt.app_write(port, "marker", "row-1");
    assert!(rt.app_state(port).unwrap().contains_key("marker"));
    m.reset(&h.id, &snap).await.unwrap();
    assert!(!rt.app_state(port).unwrap().contains_key("marker"));
}

#[tokio::test(start_paused = true)]
async fn branches_are_independent() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let h = m.launch(&Origin::image("shop"), web()).await.unwrap();
    rt.app_write(h.port().unwrap(), "cart:mug", "1");
    let snap = m.snapshot(&h.id, "checkpoint").await.unwrap();
    let mut clones = Vec::new();
    for _ in 0..3 {
        clones.push(m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap());
    }
    rt.app_write(clones[0].port().unwrap(), "marker", "only-a");
    for c in &clones[1..] {
        let s = rt.app_state(c.port().unwrap()).unwrap();
        assert!(!s.contains_key("marker"));
        assert_eq!(s.get("cart:mug").map(String::as_str), Some("1"), "clone carries the checkpoint state");
    }
    assert!(!rt.app_state(h.port().unwrap()).unwrap().contains_key("marker"));
}

#[tokio::test(start_paused = true)]
async fn running_container_clone_continues_independently() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let a = m.launch(&Origin::image("shop"), web()).await.unwrap();
    rt.app_write(a.port().unwrap(), "step", "3");
    let b = m.clone_instance(&Origin::Container { id: a.id.clone() }, web()).await.unwrap();
    assert_eq!(rt.app_state(b.port().unwrap()).unwrap().get("step").map(String::as_str), Some("3"));
    rt.app_write(a.port().unwrap(), "step", "4");
    rt.app_write(b.port().unwrap(), "branch", "b");
    assert_eq!(rt.app_state(b.port().unwrap()).unwrap().get("step").map(String::as_str), Some("3"));
    assert!(!rt.app_state(a.port().unwrap()).unwrap().contains_key("branch"));
    assert_eq!(m.get(&a.id).unwrap().state, ContainerState::Running);
}

#[tokio::test(start_paused = true)]
async fn clone_storage_is_a_small_fraction_of_the_image() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let snap = base_snapshot(&m).await;
    let image = rt.image_info("shop").await.unwrap().unwrap().size_bytes;
    let before = rt.storage_used().await.unwrap();
    m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    let delta = rt.storage_used().await.unwrap() - before;
    assert!((delta as f64) < 0.05 * image as f64, "{delta} vs {image}");
}

#[tokio::test(start_paused = true)]
async fn reset_is_idempotent() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let snap = base_snapshot(&m).await;
    let h = m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    let port = h.port().unwrap();
    rt.app_write(port, "cart:lamp", "1");
    m.reset(&h.id, &snap).await.unwrap();
    let once = rt.app_state(port).unwrap();
    m.reset(&h.id, &snap).await.unwrap();
    assert_eq!(rt.app_state(port).unwrap(), once);
    assert!(once.is_empty(), "cart empty again");
}

#[tokio::test(start_paused = true)]
async fn sequential_resets_do_not_drift() {
    let (_rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let snap = base_snapshot(&m).await;
    let h = m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    let lat = m.measure_reset(&h.id, &snap, 100).await.unwrap();
    let first: f64 = lat[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = lat[90..].iter().sum::<f64>() / 10.0;
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    let var = lat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / lat.len() as f64;
    assert!(var.sqrt() <= 0.1 * mean, "stddev {} mean {mean}", var.sqrt());
    assert!((last - first).abs() <= 0.1 * first);
}

#[tokio::test(start_paused = true)]
async fn snapshot_origin_launches_faster_than_image_origin() {
    let (_rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let snap = base_snapshot(&m).await;
    let img = m.measure_launch(&Origin::image("shop"), 2, 8).await.unwrap();
    let cow = m.measure_launch(&Origin::snapshot(&snap), 2, 8).await.unwrap();
    assert_eq!((img.samples.len(), cow.samples.len()), (8, 8));
    assert!(img.mean_latency_s >= 3.0 * cow.mean_latency_s, "{} vs {}", img.mean_latency_s, cow.mean_latency_s);
    assert!(cow.mean_storage_delta_bytes < 0.05 * cow.base_image_bytes.unwrap() as f64);
    assert_eq!(m.live_count(), 1);
}

#[tokio::test(start_paused = true)]
async fn destroyed_parent_invalidates_its_snapshots() {
    let (_rt, m) = fleet(FakeProfile::instant(), PortRange::default()).await;
    let h = m.launch(&Origin::image("shop"), web()).await.unwrap();
    let snap = m.snapshot(&h.id, "s").await.unwrap();
    let child = m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    m.destroy(&h.id).await.unwrap();
    assert!(matches!(m.launch(&Origin::snapshot(&snap), web()).await, Err(FleetError::LaunchFailed(_))));
    assert!(matches!(m.reset(&child.id, &snap).await, Err(FleetError::ResetFailed(_))));
    assert_eq!(m.get(&child.id).unwrap().state, ContainerState::Running);
}

#[tokio::test(start_paused = true)]
async fn same_handle_operations_serialize() {
    let (rt, m) = fleet(FakeProfile::default(), PortRange::default()).await;
    let snap = base_snapshot(&m).await;
    let h = m.clone_instance(&Origin::snapshot(&snap), web()).await.unwrap();
    let (a, b) = tokio::join!(m.reset(&h.id, &snap), m.destroy(&h.id));
    assert!(a.is_ok() || matches!(a, Err(FleetError::IllegalTransition { .. })));
    assert_eq!(b.unwrap().state, ContainerState::Destroyed);
    assert!(rt.app_state(h.port().unwrap()).is_none());
    assert_eq!(m.refused_transitions(), 0);
}
