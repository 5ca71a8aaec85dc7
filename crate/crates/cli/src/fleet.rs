use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Subcommand;
use serde::Serialize;
use webenv_core::fleet::fake::{FakeProfile, FakeRuntime, DEFAULT_IMAGE_REFERENCE};
use webenv_core::fleet::incus::IncusClient;
use webenv_core::fleet::{
    ContainerState, HttpProbe, ImageRef, ImageSource, LaunchSummary, ListFilter, Role, LABEL_ROLE,
};
use webenv_core::{ContainerHandle, FleetManager, Origin, SnapshotRef};

use crate::config::CliConfig;
use crate::error::CliError;
use crate::RuntimeArgs;

pub const DEFAULT_IMAGE: &str = "shop";
const BENCH_SNAPSHOT: &str = "bench-base";

#[derive(Debug, Subcommand)]
pub enum FleetCmd {
    /// Pull or import an image into the runtime store.
    Import {
        #[arg(default_value = DEFAULT_IMAGE)]
        name: String,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, value_parser = parse_source)]
        source: Option<ImageSource>,
        #[arg(long)]
        digest: Option<String>,
    },
    /// Launch a container from an image or a snapshot.
    Launch {
        #[arg(long, conflicts_with = "snapshot", required_unless_present = "snapshot")]
        image: Option<String>,
        /// `PARENT/NAME`.
        #[arg(long)]
        snapshot: Option<String>,
        #[arg(long = "label", value_parser = parse_label)]
        labels: Vec<(String, String)>,
    },
    /// Copy a container (by id) or a snapshot (`PARENT/NAME`).
    Clone {
        source: String,
        #[arg(long = "label", value_parser = parse_label)]
        labels: Vec<(String, String)>,
    },
    /// Snapshot a running container.
    Snapshot { id: String, name: String },
    /// Restore a container to a snapshot in its lineage (`NAME` or `PARENT/NAME`).
    Reset { id: String, snapshot: String },
    /// Stop a running container.
    Stop { id: String },
    /// Destroy a container; repeated calls succeed.
    Destroy { id: String },
    /// List containers, live ones by default.
    List {
        #[arg(long, value_parser = parse_role)]
        role: Option<Role>,
        #[arg(long, value_parser = parse_state)]
        state: Option<ContainerState>,
        #[arg(long = "label", value_parser = parse_label)]
        labels: Vec<(String, String)>,
        /// Include destroyed containers.
        #[arg(long)]
        all: bool,
    },
    /// List known snapshots.
    Snapshots,
    /// Launch latency, storage and memory per origin: image vs snapshot.
    Bench {
        #[arg(long, default_value = DEFAULT_IMAGE)]
        image: String,
        /// Snapshot origin to measure (`PARENT/NAME`); one is made from the image when absent.
        #[arg(long)]
        snapshot: Option<String>,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

fn parse_label(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn parse_json_str<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_role(s: &str) -> Result<Role, String> {
    parse_json_str(s)
}

fn parse_state(s: &str) -> Result<ContainerState, String> {
    parse_json_str(s)
}

fn parse_source(s: &str) -> Result<ImageSource, String> {
    parse_json_str(s)
}

/// An open fleet, plus the simulated runtime when one is in use.
pub struct Fleet {
    pub manager: Arc<FleetManager>,
    pub fake: Option<(Arc<FakeRuntime>, PathBuf)>,
}

impl Fleet {
    pub async fn open(args: &RuntimeArgs, cfg: &CliConfig) -> Result<Self, CliError> {
        let fleet_cfg = cfg.fleet_config()?;
        let (manager, fake) = match &args.fake_runtime {
            Some(state) => {
                if !(args.fake_scale >= 0.0 && args.fake_scale.is_finite()) {
                    return Err(CliError::input("--fake-scale must be a non-negative number"));
                }
                let profile = FakeProfile::default().scaled(args.fake_scale);
                let rt = Arc::new(
                    FakeRuntime::load(profile, state)
                        .map_err(|e| CliError::env(format!("{}: {e}", state.display())))?,
                );
                (FleetManager::new(rt.clone(), rt.clone(), fleet_cfg)?, Some((rt, state.clone())))
            }
            None => {
                if !fleet_cfg.socket.exists() {
                    return Err(CliError::env(format!("runtime socket {} does not exist", fleet_cfg.socket.display())));
                }
                let rt = Arc::new(IncusClient::new(&fleet_cfg.socket, &fleet_cfg.storage_pool));
                let probe = Arc::new(HttpProbe::new(&fleet_cfg.probe_path));
                (FleetManager::new(rt, probe, fleet_cfg)?, None)
            }
        };
        manager.recover().await?;
        Ok(Fleet { manager: Arc::new(manager), fake })
    }

    /// Persists the simulated runtime, if any.
    pub fn save(&self) -> Result<(), CliError> {
        if let Some((rt, path)) = &self.fake {
            rt.save(path).map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// Image spec from the config, or the demo image on the simulated runtime.
    fn image_ref(&self, name: &str) -> Option<ImageRef> {
        if let Some(spec) = self.manager.config().image(name) {
            return Some(spec.to_ref());
        }
        (self.fake.is_some() && name == DEFAULT_IMAGE).then(|| ImageRef {
            name: name.into(),
            source: ImageSource::OciRegistry,
            reference: DEFAULT_IMAGE_REFERENCE.into(),
            digest: None,
        })
    }

    async fn ensure_image(&self, name: &str) -> Result<(), CliError> {
        if self.manager.runtime().image_info(name).await.map_err(|e| CliError::runtime(e.to_string()))?.is_some() {
            return Ok(());
        }
        let image = self
            .image_ref(name)
            .ok_or_else(|| CliError::input(format!("image {name} is not imported and not configured")))?;
        self.manager.import_image(&image).await?;
        Ok(())
    }

    pub fn snapshot_ref(&self, spec: &str, default_parent: Option<&str>) -> Result<SnapshotRef, CliError> {
        let (parent, name) = match (spec.split_once('/'), default_parent) {
            (Some((p, n)), _) => (p, n),
            (None, Some(p)) => (p, spec),
            (None, None) => return Err(CliError::input(format!("expected PARENT/NAME, got {spec:?}"))),
        };
        self.manager.find_snapshot(parent, name).ok_or_else(|| CliError::input(format!("no snapshot {parent}/{name}")))
    }
}

fn label_map(pairs: Vec<(String, String)>) -> BTreeMap<String, String> {
    let mut m: BTreeMap<_, _> = pairs.into_iter().collect();
    m.entry(LABEL_ROLE.into()).or_insert_with(|| Role::WebServer.as_str().into());
    m
}

fn origin_text(o: &Origin) -> String {
    match o {
        Origin::Image { name } => format!("image:{name}"),
        Origin::Snapshot { parent, name } => format!("snapshot:{parent}/{name}"),
        Origin::Container { id } => format!("container:{id}"),
    }
}

fn handle_rows(hs: &[ContainerHandle]) -> String {
    let mut out = format!("{:<16} {:<10} {:<22} {:<36} LABELS\n", "ID", "STATE", "ENDPOINT", "ORIGIN");
    for h in hs {
        let labels: Vec<String> = h.labels.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let state = serde_json::to_value(h.state).unwrap();
        out.push_str(&format!(
            "{:<16} {:<10} {:<22} {:<36} {}\n",
            h.id,
            state.as_str().unwrap_or_default(),
            h.endpoint.as_deref().unwrap_or("-"),
            origin_text(&h.origin),
            labels.join(",")
        ));
    }
    out
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub image: LaunchSummary,
    pub snapshot: LaunchSummary,
    /// Image mean latency over snapshot mean latency.
    pub speedup: f64,
    /// Snapshot clone storage delta over base image size.
    pub storage_ratio: Option<f64>,
}

const MIB: f64 = (1u64 << 20) as f64;

fn bench_table(r: &BenchReport) -> String {
    let mut out = format!(
        "{:<10} {:>7} {:>9} {:>9} {:>9} {:>9} {:>14} {:>11}\n",
        "origin", "samples", "mean_s", "stddev_s", "min_s", "max_s", "storage_mib", "memory_mib"
    );
    for (name, s) in [("image", &r.image), ("snapshot", &r.snapshot)] {
        out.push_str(&format!(
            "{:<10} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>14.2} {:>11.1}\n",
            name,
            s.samples.len(),
            s.mean_latency_s,
            s.stddev_latency_s,
            s.min_latency_s,
            s.max_latency_s,
            s.mean_storage_delta_bytes / MIB,
            s.mean_memory_rss_bytes / MIB,
        ));
    }
    out.push_str(&format!("speedup: {:.2}x\n", r.speedup));
    if let (Some(ratio), Some(base)) = (r.storage_ratio, r.snapshot.base_image_bytes) {
        out.push_str(&format!("clone storage: {:.2}% of {:.1} MiB base image\n", ratio * 100.0, base as f64 / MIB));
    }
    out
}

async fn bench(
    f: &Fleet,
    image: &str,
    snapshot: Option<&str>,
    warmup: usize,
    samples: usize,
) -> Result<BenchReport, CliError> {
    if samples == 0 {
        return Err(CliError::input("--samples must be at least 1"));
    }
    f.ensure_image(image).await?;
    let m = &f.manager;
    let img = m.measure_launch(&Origin::image(image), warmup, samples).await?;
    let (snap, temp_base) = match snapshot {
        Some(s) => (f.snapshot_ref(s, None)?, None),
        None => {
            let base = m.launch(&Origin::image(image), label_map(vec![])).await?;
            match m.snapshot(&base.id, BENCH_SNAPSHOT).await {
                Ok(s) => (s, Some(base.id)),
                Err(e) => {
                    let _ = m.destroy(&base.id).await;
                    return Err(e.into());
                }
            }
        }
    };
    let cow = m.measure_launch(&Origin::snapshot(&snap), warmup, samples).await;
    if let Some(id) = temp_base {
        m.destroy(&id).await?;
    }
    let cow = cow?;
    let speedup = if cow.mean_latency_s > 0.0 { img.mean_latency_s / cow.mean_latency_s } else { f64::INFINITY };
    let storage_ratio = cow.base_image_bytes.filter(|b| *b > 0).map(|b| cow.mean_storage_delta_bytes / b as f64);
    Ok(BenchReport { image: img, snapshot: cow, speedup, storage_ratio })
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
    } else {
        print!("{}", text());
    }
}

async fn exec(f: &Fleet, cmd: FleetCmd, json: bool) -> Result<(), CliError> {
    let m = &f.manager;
    let one = |h: &ContainerHandle| handle_rows(std::slice::from_ref(h));
    match cmd {
        FleetCmd::Import { name, reference, source, digest } => {
            let image = match (reference, f.image_ref(&name)) {
                (Some(reference), _) => ImageRef {
                    name: name.clone(),
                    source: source.unwrap_or(ImageSource::OciRegistry),
                    reference,
                    digest: None,
                },
                (None, Some(i)) => i,
                (None, None) => {
                    return Err(CliError::input(format!("no reference given and image {name} is not configured")))
                }
            };
            let image = ImageRef { digest: digest.or(image.digest), ..image };
            let out = m.import_image(&image).await?;
            emit(json, &out, || format!("{} {}\n", out.name, out.digest.clone().unwrap_or_default()));
        }
        FleetCmd::Launch { image, snapshot, labels } => {
            let origin = match (image, snapshot) {
                (Some(i), _) => {
                    f.ensure_image(&i).await?;
                    Origin::image(&i)
                }
                (None, Some(s)) => Origin::snapshot(&f.snapshot_ref(&s, None)?),
                (None, None) => unreachable!("clap requires one"),
            };
            let h = m.launch(&origin, label_map(labels)).await?;
            emit(json, &h, || one(&h));
        }
        FleetCmd::Clone { source, labels } => {
            let origin = if source.contains('/') {
                Origin::snapshot(&f.snapshot_ref(&source, None)?)
            } else {
                Origin::Container { id: source }
            };
            let h = m.clone_instance(&origin, label_map(labels)).await?;
            emit(json, &h, || one(&h));
        }
        FleetCmd::Snapshot { id, name } => {
            let s = m.snapshot(&id, &name).await?;
            emit(json, &s, || format!("{}/{}\n", s.parent, s.name));
        }
        FleetCmd::Reset { id, snapshot } => {
            let snap = f.snapshot_ref(&snapshot, Some(&id))?;
            let h = m.reset(&id, &snap).await?;
            emit(json, &h, || one(&h));
        }
        FleetCmd::Stop { id } => {
            let h = m.stop(&id).await?;
            emit(json, &h, || one(&h));
        }
        FleetCmd::Destroy { id } => {
            let h = m.destroy(&id).await?;
            emit(json, &h, || one(&h));
        }
        FleetCmd::List { role, state, labels, all } => {
            let filter = ListFilter { role, state, labels: labels.into_iter().collect(), live_only: !all };
            let hs = m.list(&filter);
            emit(json, &hs, || handle_rows(&hs));
        }
        FleetCmd::Snapshots => {
            let ss = m.snapshots();
            emit(json, &ss, || ss.iter().map(|s| format!("{}/{}\n", s.parent, s.name)).collect());
        }
        FleetCmd::Bench { image, snapshot, warmup, samples } => {
            let r = bench(f, &image, snapshot.as_deref(), warmup, samples).await?;
            emit(json, &r, || bench_table(&r));
        }
    }
    Ok(())
}

pub async fn run(args: &RuntimeArgs, cfg: &CliConfig, cmd: FleetCmd, json: bool) -> Result<(), CliError> {
    let f = Fleet::open(args, cfg).await?;
    let result = exec(&f, cmd, json).await;
    f.save()?;
    result
}
