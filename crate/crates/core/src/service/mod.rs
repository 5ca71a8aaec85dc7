//! Episodes: one cloned web-server container paired with one browser session,
//! driven step by step, recorded as a trajectory, optionally gated by a human.

// Errors carry the pending action so callers can show it without a lookup.
#![allow(clippy::result_large_err)]

mod config;
pub mod http;
pub mod trajectory;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, Mutex as AsyncMutex};
use tracing::{info, warn};

use crate::action::{validate_action, ActionRequest, ActionValidationError};
use crate::driver::{
    BrowserConnector, BrowserSession, SessionOverrides, StepErrorCode, StepOutcome, StepStatus, StepTiming,
};
use crate::fleet::{labels, ContainerHandle, FleetManager, Origin, SnapshotRef, LABEL_EPISODE, LABEL_ROLE};
use crate::obs::{BoxRect, ObservationDocument};

pub use config::ServiceConfig;
pub use trajectory::{
    EpisodeStatus, TrajectoryEntry, TrajectoryError, TrajectoryHeader, TrajectoryRecord, Verdict, TRAJECTORY_SCHEMA,
};

/// Name of the snapshot taken of every episode container right after clone.
pub const INITIAL_SNAPSHOT: &str = "initial";
pub const DEFAULT_MAX_STEPS: u32 = 30;

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

/// Snapshot named by container and snapshot name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotName {
    pub parent: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub task_id: String,
    pub server_snapshot: SnapshotName,
    /// `{endpoint}`, `{host}` and `{port}` are replaced with the container's.
    pub start_url: String,
    #[serde(default)]
    pub session: SessionOverrides,
    /// Falls back to the service default when absent.
    #[serde(default)]
    pub oversight: Option<bool>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
}

impl EpisodeConfig {
    pub fn new(task_id: &str, snapshot: &SnapshotRef, start_url: &str) -> Self {
        EpisodeConfig {
            task_id: task_id.into(),
            server_snapshot: SnapshotName { parent: snapshot.parent.clone(), name: snapshot.name.clone() },
            start_url: start_url.into(),
            session: SessionOverrides::default(),
            oversight: None,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn start_url_for(&self, endpoint: &str) -> String {
        let (host, port) = endpoint.rsplit_once(':').unwrap_or((endpoint, ""));
        self.start_url.replace("{endpoint}", endpoint).replace("{host}", host).replace("{port}", port)
    }
}

/// An action waiting for an overseer's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAction {
    pub episode_id: String,
    pub index: u32,
    pub action: ActionRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EpisodeEvent {
    PendingAction(PendingAction),
    StepCompleted {
        episode_id: String,
        index: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<StepStatus>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<Verdict>,
        observation_digest: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_box: Option<BoxRect>,
    },
    Reset {
        episode_id: String,
        epoch: u32,
        observation_digest: String,
    },
    Closed {
        episode_id: String,
    },
}

impl EpisodeEvent {
    pub fn name(&self) -> &'static str {
        match self {
            EpisodeEvent::PendingAction(_) => "pending_action",
            EpisodeEvent::StepCompleted { .. } => "step_completed",
            EpisodeEvent::Reset { .. } => "reset",
            EpisodeEvent::Closed { .. } => "closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub id: String,
    pub task_id: String,
    pub status: EpisodeStatus,
    pub step_count: u32,
    pub max_steps: u32,
    pub oversight: bool,
    pub epoch: u32,
    pub container_id: String,
    pub endpoint: String,
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_action: Option<PendingAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStart {
    pub episode: EpisodeInfo,
    pub observation: ObservationDocument,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("episode capacity of {0} reached")]
    CapacityExhausted(usize),
    #[error("provisioning failed: {0}")]
    ProvisionFailed(String),
    #[error("episode is not active: {0}")]
    EpisodeNotActive(String),
    #[error(transparent)]
    Validation(ActionValidationError),
    #[error("action awaits approval")]
    AwaitingApproval(PendingAction),
    #[error("an action is already awaiting approval")]
    PendingActionExists(PendingAction),
    #[error("no action is awaiting approval")]
    NoPendingAction,
    #[error("reset failed: {0}")]
    ResetFailed(String),
    #[error("no such episode: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::CapacityExhausted(_) => "capacity_exhausted",
            ServiceError::ProvisionFailed(_) => "provision_failed",
            ServiceError::EpisodeNotActive(_) => "episode_not_active",
            ServiceError::Validation(_) => "validation_error",
            ServiceError::AwaitingApproval(_) => "awaiting_approval",
            ServiceError::PendingActionExists(_) => "pending_action_exists",
            ServiceError::NoPendingAction => "no_pending_action",
            ServiceError::ResetFailed(_) => "reset_failed",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
        }
    }
}

struct Episode {
    id: String,
    cfg: EpisodeConfig,
    oversight: bool,
    container: ContainerHandle,
    initial: SnapshotRef,
    session: Option<BrowserSession>,
    step_count: u32,
    status: EpisodeStatus,
    pending: Option<PendingAction>,
    trajectory: TrajectoryRecord,
    archived: Vec<TrajectoryRecord>,
    closed: bool,
}

impl Episode {
    fn info(&self) -> EpisodeInfo {
        EpisodeInfo {
            id: self.id.clone(),
            task_id: self.cfg.task_id.clone(),
            status: self.status.clone(),
            step_count: self.step_count,
            max_steps: self.cfg.max_steps,
            oversight: self.oversight,
            epoch: self.trajectory.header.epoch,
            container_id: self.container.id.clone(),
            endpoint: self.container.endpoint.clone().unwrap_or_default(),
            closed: self.closed,
            pending_action: self.pending.clone(),
        }
    }

    fn observation(&self) -> ObservationDocument {
        self.session.as_ref().and_then(|s| s.last_observation()).cloned().unwrap_or_else(|| {
            self.trajectory.entries.iter().rev().find_map(|e| e.observation().cloned()).expect("initial entry")
        })
    }

    fn end(&mut self, status: EpisodeStatus) {
        self.status = status.clone();
        let index = self.trajectory.next_index();
        self.trajectory.entries.push(TrajectoryEntry::Terminal { index, status });
    }

    fn require_active(&self) -> Result<(), ServiceError> {
        if self.closed {
            return Err(ServiceError::EpisodeNotActive("closed".into()));
        }
        match &self.status {
            EpisodeStatus::Active => Ok(()),
            s => Err(ServiceError::EpisodeNotActive(serde_json::to_string(s).unwrap_or_default())),
        }
    }
}

struct Slot {
    episode: Arc<AsyncMutex<Episode>>,
    events: broadcast::Sender<EpisodeEvent>,
}

/// Runs many episodes at once; operations on one episode are serialized.
pub struct EpisodeService {
    fleet: Arc<FleetManager>,
    connector: Arc<dyn BrowserConnector>,
    cfg: ServiceConfig,
    episodes: Mutex<HashMap<String, Arc<Slot>>>,
    active: Mutex<usize>,
}

struct CapacityGuard<'a> {
    svc: &'a EpisodeService,
    armed: bool,
}

impl Drop for CapacityGuard<'_> {
    fn drop(&mut self) {
        if self.armed {
            *self.svc.active.lock().unwrap() -= 1;
        }
    }
}

fn new_episode_id() -> String {
    format!("ep-{}", &uuid::Uuid::new_v4().simple().to_string()[..12])
}

impl EpisodeService {
    pub fn new(fleet: Arc<FleetManager>, connector: Arc<dyn BrowserConnector>, cfg: ServiceConfig) -> Self {
        EpisodeService { fleet, connector, cfg, episodes: Mutex::new(HashMap::new()), active: Mutex::new(0) }
    }

    pub fn fleet(&self) -> &Arc<FleetManager> {
        &self.fleet
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        self.episodes.lock().unwrap().get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.into()))
    }

    fn reserve(&self) -> Result<CapacityGuard<'_>, ServiceError> {
        let mut n = self.active.lock().unwrap();
        if *n >= self.cfg.capacity {
            return Err(ServiceError::CapacityExhausted(self.cfg.capacity));
        }
        *n += 1;
        Ok(CapacityGuard { svc: self, armed: true })
    }

    /// Episodes that are open (not yet closed).
    pub fn open_count(&self) -> usize {
        *self.active.lock().unwrap()
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<EpisodeEvent>, ServiceError> {
        Ok(self.slot(id)?.events.subscribe())
    }

    async fn open_session(&self, cfg: &EpisodeConfig, endpoint: &str) -> Result<(BrowserSession, StepOutcome), String> {
        let session_cfg = cfg.session.apply(&self.cfg.session);
        let mut session =
            BrowserSession::open(session_cfg, self.connector.as_ref()).await.map_err(|e| e.to_string())?;
        let out = session.goto(&cfg.start_url_for(endpoint)).await;
        if out.observation.is_none() || out.status == StepStatus::Error(StepErrorCode::NavigationFailed) {
            let _ = session.close().await;
            return Err(format!("start page: {}", out.error_detail.unwrap_or_else(|| "no observation".into())));
        }
        Ok((session, out))
    }

    pub async fn create_episode(&self, cfg: EpisodeConfig) -> Result<EpisodeStart, ServiceError> {
        if cfg.max_steps == 0 {
            return Err(ServiceError::BadRequest("max_steps must be at least 1".into()));
        }
        let session_cfg = cfg.session.apply(&self.cfg.session);
        session_cfg.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut guard = self.reserve()?;
        let snap =
            self.fleet.find_snapshot(&cfg.server_snapshot.parent, &cfg.server_snapshot.name).ok_or_else(|| {
                ServiceError::ProvisionFailed(format!(
                    "no snapshot {}/{}",
                    cfg.server_snapshot.parent, cfg.server_snapshot.name
                ))
            })?;
        let id = new_episode_id();
        let lbl = labels(&[(LABEL_EPISODE, &id), (LABEL_ROLE, "web-server")]);
        let container = self
            .fleet
            .clone_instance(&Origin::snapshot(&snap), lbl)
            .await
            .map_err(|e| ServiceError::ProvisionFailed(e.to_string()))?;
        let initial = match self.fleet.snapshot(&container.id, INITIAL_SNAPSHOT).await {
            Ok(s) => s,
            Err(e) => return Err(self.rollback(&container.id, e.to_string()).await),
        };
        let endpoint = container.endpoint.clone().expect("running container");
        let (session, out) = match self.open_session(&cfg, &endpoint).await {
            Ok(x) => x,
            Err(e) => return Err(self.rollback(&container.id, e).await),
        };
        let observation = out.observation.clone().expect("checked above");
        let oversight = cfg.oversight.unwrap_or(self.cfg.oversight);
        let header = TrajectoryHeader {
            schema: TRAJECTORY_SCHEMA.into(),
            episode_id: id.clone(),
            task_id: cfg.task_id.clone(),
            epoch: 0,
            start_url: cfg.start_url.clone(),
            endpoint: endpoint.clone(),
        };
        let mut trajectory = TrajectoryRecord::new(header);
        trajectory.entries.push(initial_entry(&out));
        let ep = Episode {
            id: id.clone(),
            cfg,
            oversight,
            container,
            initial,
            session: Some(session),
            step_count: 0,
            status: EpisodeStatus::Active,
            pending: None,
            trajectory,
            archived: Vec::new(),
            closed: false,
        };
        let info = ep.info();
        let (events, _) = broadcast::channel(256);
        let slot = Slot { episode: Arc::new(AsyncMutex::new(ep)), events };
        self.episodes.lock().unwrap().insert(id.clone(), Arc::new(slot));
        guard.armed = false;
        info!(episode = %id, endpoint = %endpoint, "episode created");
        Ok(EpisodeStart { episode: info, observation })
    }

    async fn rollback(&self, container: &str, why: String) -> ServiceError {
        if let Err(e) = self.fleet.destroy(container).await {
            warn!(container, error = %e, "rollback destroy failed");
        }
        ServiceError::ProvisionFailed(why)
    }

    pub async fn step(&self, id: &str, action: ActionRequest) -> Result<StepOutcome, ServiceError> {
        let slot = self.slot(id)?;
        let mut ep = slot.episode.lock().await;
        ep.require_active()?;
        if let Some(p) = &ep.pending {
            return Err(ServiceError::PendingActionExists(p.clone()));
        }
        let session = ep.session.as_ref().expect("active episode has a session");
        let obs = ep.observation();
        validate_action(&action, &obs, session.tab_count()).map_err(ServiceError::Validation)?;
        if ep.oversight {
            let target = action.target().map(|t| t.to_string());
            let target_label = target.as_deref().and_then(|t| label_of(&obs, t));
            let pending = PendingAction {
                episode_id: ep.id.clone(),
                index: ep.trajectory.next_index(),
                action,
                target,
                target_label,
            };
            ep.pending = Some(pending.clone());
            let _ = slot.events.send(EpisodeEvent::PendingAction(pending.clone()));
            return Err(ServiceError::AwaitingApproval(pending));
        }
        Ok(run_action(&mut ep, &slot.events, action, None).await)
    }

    pub async fn approve_pending(&self, id: &str, verdict: Verdict) -> Result<StepOutcome, ServiceError> {
        let slot = self.slot(id)?;
        let mut ep = slot.episode.lock().await;
        let pending = ep.pending.take().ok_or(ServiceError::NoPendingAction)?;
        ep.require_active()?;
        match verdict {
            Verdict::Approve => Ok(run_action(&mut ep, &slot.events, pending.action, Some(Verdict::Approve)).await),
            Verdict::Reject => {
                let observation = ep.observation();
                let digest = observation.digest();
                let index = ep.trajectory.next_index();
                ep.trajectory.entries.push(TrajectoryEntry::Step {
                    index,
                    action: pending.action,
                    status: None,
                    verdict: Some(Verdict::Reject),
                    observation_digest: digest.clone(),
                    observation: observation.clone(),
                    timing: StepTiming::default(),
                    error_detail: None,
                    answer: None,
                });
                let _ = slot.events.send(EpisodeEvent::StepCompleted {
                    episode_id: ep.id.clone(),
                    index,
                    status: None,
                    verdict: Some(Verdict::Reject),
                    observation_digest: digest,
                    target_box: None,
                });
                Ok(StepOutcome {
                    status: StepStatus::Ok,
                    observation: Some(observation),
                    error_detail: Some("rejected by overseer; not executed".into()),
                    timing: StepTiming::default(),
                    answer: None,
                    target_box: None,
                })
            }
        }
    }

    pub async fn reset_episode(&self, id: &str) -> Result<EpisodeStart, ServiceError> {
        let slot = self.slot(id)?;
        let mut ep = slot.episode.lock().await;
        if ep.closed {
            return Err(ServiceError::EpisodeNotActive("closed".into()));
        }
        let container = self
            .fleet
            .reset(&ep.container.id, &ep.initial)
            .await
            .map_err(|e| ServiceError::ResetFailed(e.to_string()))?;
        if let Some(mut s) = ep.session.take() {
            let _ = s.close().await;
        }
        let endpoint = container.endpoint.clone().expect("running container");
        let (session, out) = self.open_session(&ep.cfg, &endpoint).await.map_err(ServiceError::ResetFailed)?;
        let header =
            TrajectoryHeader { epoch: ep.trajectory.header.epoch + 1, endpoint, ..ep.trajectory.header.clone() };
        let mut fresh = TrajectoryRecord::new(header);
        fresh.entries.push(initial_entry(&out));
        let old = std::mem::replace(&mut ep.trajectory, fresh);
        self.persist(&old);
        ep.archived.push(old);
        ep.container = container;
        ep.session = Some(session);
        ep.step_count = 0;
        ep.status = EpisodeStatus::Active;
        ep.pending = None;
        let observation = out.observation.expect("checked in open_session");
        let _ = slot.events.send(EpisodeEvent::Reset {
            episode_id: ep.id.clone(),
            epoch: ep.trajectory.header.epoch,
            observation_digest: observation.digest(),
        });
        Ok(EpisodeStart { episode: ep.info(), observation })
    }

    /// The current epoch's trajectory, or an archived one.
    pub async fn get_trajectory(&self, id: &str, epoch: Option<u32>) -> Result<TrajectoryRecord, ServiceError> {
        let slot = self.slot(id)?;
        let ep = slot.episode.lock().await;
        match epoch {
            None => Ok(ep.trajectory.clone()),
            Some(e) if e == ep.trajectory.header.epoch => Ok(ep.trajectory.clone()),
            Some(e) => ep
                .archived
                .iter()
                .find(|t| t.header.epoch == e)
                .cloned()
                .ok_or_else(|| ServiceError::NotFound(format!("{id} epoch {e}"))),
        }
    }

    pub async fn info(&self, id: &str) -> Result<EpisodeInfo, ServiceError> {
        Ok(self.slot(id)?.episode.lock().await.info())
    }

    pub async fn list(&self) -> Vec<EpisodeInfo> {
        let slots: Vec<_> = self.episodes.lock().unwrap().values().cloned().collect();
        let mut out = Vec::with_capacity(slots.len());
        for s in slots {
            out.push(s.episode.lock().await.info());
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Ends the episode, closes its browser, destroys its container.
    /// Idempotent.
    pub async fn close_episode(&self, id: &str) -> Result<EpisodeInfo, ServiceError> {
        let slot = self.slot(id)?;
        let mut ep = slot.episode.lock().await;
        if ep.closed {
            return Ok(ep.info());
        }
        if let Some(mut s) = ep.session.take() {
            let _ = s.close().await;
        }
        if ep.status.is_active() {
            ep.end(EpisodeStatus::Failed { reason: "closed before completion".into() });
        }
        ep.pending = None;
        if let Err(e) = self.fleet.destroy(&ep.container.id).await {
            warn!(episode = %id, error = %e, "container teardown failed");
        }
        if let Some(h) = self.fleet.get(&ep.container.id) {
            ep.container = h;
        }
        ep.closed = true;
        self.persist(&ep.trajectory);
        *self.active.lock().unwrap() -= 1;
        let _ = slot.events.send(EpisodeEvent::Closed { episode_id: id.into() });
        Ok(ep.info())
    }

    /// Closes every open episode.
    pub async fn close_all(&self) -> usize {
        let ids: Vec<String> = self.episodes.lock().unwrap().keys().cloned().collect();
        let results = futures::future::join_all(ids.iter().map(|id| self.close_episode(id))).await;
        results.into_iter().filter(|r| r.is_ok()).count()
    }

    fn persist(&self, t: &TrajectoryRecord) {
        let Some(dir) = &self.cfg.trajectory_dir else { return };
        let path: PathBuf = dir.join(format!("{}-{}.jsonl", t.header.episode_id, t.header.epoch));
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, t.to_jsonl())) {
            warn!(path = %path.display(), error = %e, "could not write trajectory");
        }
    }
}

fn label_of(obs: &ObservationDocument, id: &str) -> Option<String> {
    obs.clickables.iter().find(|c| c.id.as_str() == id).map(|c| c.label.clone())
}

fn initial_entry(out: &StepOutcome) -> TrajectoryEntry {
    let o = out.observation.clone().expect("initial observation");
    TrajectoryEntry::Initial {
        index: 0,
        observation_digest: o.digest(),
        observation: o,
        status: (!out.is_ok()).then_some(out.status),
    }
}

async fn run_action(
    ep: &mut Episode,
    events: &broadcast::Sender<EpisodeEvent>,
    action: ActionRequest,
    verdict: Option<Verdict>,
) -> StepOutcome {
    let session = ep.session.as_mut().expect("active episode has a session");
    let out = session.execute(&action).await;
    ep.step_count += 1;
    let observation = out.observation.clone().unwrap_or_else(|| ep.observation());
    let digest = observation.digest();
    let index = ep.trajectory.next_index();
    ep.trajectory.entries.push(TrajectoryEntry::Step {
        index,
        action: action.clone(),
        status: Some(out.status),
        verdict,
        observation_digest: digest.clone(),
        observation,
        timing: out.timing,
        error_detail: out.error_detail.clone(),
        answer: out.answer.clone(),
    });
    let _ = events.send(EpisodeEvent::StepCompleted {
        episode_id: ep.id.clone(),
        index,
        status: Some(out.status),
        verdict,
        observation_digest: digest,
        target_box: out.target_box,
    });
    if let ActionRequest::Terminate { answer } = &action {
        ep.end(EpisodeStatus::Terminated { answer: answer.clone() });
    } else if ep.step_count >= ep.cfg.max_steps {
        ep.end(EpisodeStatus::Failed { reason: "step budget exhausted".into() });
    }
    out
}
