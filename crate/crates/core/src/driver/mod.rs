//! Live browser sessions: instrumentation, snapshots, and action execution
//! synchronized on network quiescence.

mod backend;
pub mod cdp;
pub mod fixtures;
pub mod sim;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

pub use backend::{BrowserBackend, BrowserConnector, NetworkPoll, TabId};

use crate::action::ActionRequest;
use crate::obs::{compile_with_bindings, BoxRect, ObservationDocument, RawDomSnapshot, SemanticId, Size};
use crate::quiescence::{
    first_idle_instant, NetworkActivityLedger, NetworkEvent, QuiescenceParams, QuiescenceVerdict, DEFAULT_IDLE_WINDOW,
    DEFAULT_LONG_REQUEST_THRESHOLD, DEFAULT_TIMEOUT,
};

/// Page-runtime script injected into every document.
pub const INSTRUMENTATION_JS: &str = include_str!("../../assets/instrument.js");
pub const INSTRUMENTATION_VERSION: u32 = 1;

pub const ENV_BROWSER_ENDPOINT: &str = "WEBENV_BROWSER_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("cannot connect to browser: {0}")]
    ConnectFailed(String),
    #[error("instrumentation failed: {0}")]
    InjectionFailed(String),
    #[error("snapshot failed: {0}")]
    SnapshotFailed(String),
    #[error("navigation failed: {0}")]
    NavigationFailed(String),
    #[error("tab index {index} out of range (open tabs: {count})")]
    TabIndexOutOfRange { index: usize, count: usize },
    #[error("session is closed")]
    SessionClosed,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("browser protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub debug_endpoint: String,
    pub viewport: Size,
    #[serde(rename = "idle_window_ms", with = "crate::serde_ms")]
    pub idle_window: Duration,
    #[serde(rename = "timeout_ms", with = "crate::serde_ms")]
    pub timeout: Duration,
    /// `None` disables the long-request exemption.
    #[serde(rename = "long_request_threshold_ms", with = "crate::serde_ms::option")]
    pub long_request_threshold: Option<Duration>,
    pub max_retries: u32,
    /// Pointer dwell after a hover before quiescence is awaited.
    #[serde(rename = "hover_dwell_ms", with = "crate::serde_ms")]
    pub hover_dwell: Duration,
    #[serde(rename = "poll_interval_ms", with = "crate::serde_ms")]
    pub poll_interval: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            debug_endpoint: "http://127.0.0.1:9222".into(),
            viewport: Size::default(),
            idle_window: DEFAULT_IDLE_WINDOW,
            timeout: DEFAULT_TIMEOUT,
            long_request_threshold: Some(DEFAULT_LONG_REQUEST_THRESHOLD),
            max_retries: 2,
            hover_dwell: Duration::from_millis(100),
            poll_interval: Duration::from_millis(25),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: &str| Err(DriverError::InvalidConfig(m.to_string()));
        if self.idle_window.is_zero() || self.timeout.is_zero() || self.poll_interval.is_zero() {
            return bad("durations must be positive");
        }
        if self.long_request_threshold.is_some_and(|d| d.is_zero()) {
            return bad("long_request_threshold must be positive");
        }
        if !(self.viewport.width > 0.0 && self.viewport.height > 0.0) {
            return bad("viewport must have positive size");
        }
        Ok(())
    }

    pub fn quiescence(&self) -> QuiescenceParams {
        QuiescenceParams::from_durations(self.idle_window, self.timeout, self.long_request_threshold)
    }
}

/// Partial overrides applied on top of a base [`SessionConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viewport: Option<Size>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_window_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_request_threshold_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
}

impl SessionOverrides {
    pub fn apply(&self, base: &SessionConfig) -> SessionConfig {
        let mut c = base.clone();
        if let Some(v) = self.viewport {
            c.viewport = v;
        }
        if let Some(v) = self.idle_window_ms {
            c.idle_window = Duration::from_millis(v);
        }
        if let Some(v) = self.timeout_ms {
            c.timeout = Duration::from_millis(v);
        }
        if let Some(v) = self.long_request_threshold_ms {
            c.long_request_threshold = Some(Duration::from_millis(v));
        }
        if let Some(v) = self.max_retries {
            c.max_retries = v;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepErrorCode {
    StaleElement,
    Timeout,
    NotInteractable,
    NavigationFailed,
    TabIndexOutOfRange,
    SessionClosed,
    SnapshotFailed,
    BrowserError,
}

impl StepErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            StepErrorCode::StaleElement => "stale_element",
            StepErrorCode::Timeout => "timeout",
            StepErrorCode::NotInteractable => "not_interactable",
            StepErrorCode::NavigationFailed => "navigation_failed",
            StepErrorCode::TabIndexOutOfRange => "tab_index_out_of_range",
            StepErrorCode::SessionClosed => "session_closed",
            StepErrorCode::SnapshotFailed => "snapshot_failed",
            StepErrorCode::BrowserError => "browser_error",
        }
    }

    const ALL: [StepErrorCode; 8] = [
        StepErrorCode::StaleElement,
        StepErrorCode::Timeout,
        StepErrorCode::NotInteractable,
        StepErrorCode::NavigationFailed,
        StepErrorCode::TabIndexOutOfRange,
        StepErrorCode::SessionClosed,
        StepErrorCode::SnapshotFailed,
        StepErrorCode::BrowserError,
    ];
}

/// `ok`, or the error code, on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum StepStatus {
    Ok,
    Error(StepErrorCode),
}

impl From<StepStatus> for String {
    fn from(s: StepStatus) -> String {
        match s {
            StepStatus::Ok => "ok".into(),
            StepStatus::Error(c) => c.as_str().into(),
        }
    }
}

impl TryFrom<String> for StepStatus {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "ok" {
            return Ok(StepStatus::Ok);
        }
        StepErrorCode::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .map(|c| StepStatus::Error(*c))
            .ok_or_else(|| format!("unknown step status {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTiming {
    /// Target resolution plus the primitive itself.
    pub action_ms: f64,
    pub quiescence_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub timing: StepTiming,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Target box in viewport coordinates at interaction time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_box: Option<BoxRect>,
}

impl StepOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == StepStatus::Ok
    }

    fn error(code: StepErrorCode, detail: impl Into<String>) -> Self {
        StepOutcome {
            status: StepStatus::Error(code),
            observation: None,
            error_detail: Some(detail.into()),
            timing: StepTiming::default(),
            answer: None,
            target_box: None,
        }
    }
}

struct TabState {
    id: TabId,
    document: Option<String>,
    events: Vec<NetworkEvent>,
    ledger: NetworkActivityLedger,
}

impl TabState {
    fn new(id: TabId, params: QuiescenceParams) -> Self {
        TabState { id, document: None, events: Vec::new(), ledger: NetworkActivityLedger::new(params) }
    }
}

/// Failure inside one step, before it is turned into an outcome.
struct StepFailure {
    code: StepErrorCode,
    detail: String,
}

impl From<DriverError> for StepFailure {
    fn from(e: DriverError) -> Self {
        let code = match &e {
            DriverError::NavigationFailed(_) => StepErrorCode::NavigationFailed,
            DriverError::TabIndexOutOfRange { .. } => StepErrorCode::TabIndexOutOfRange,
            DriverError::SessionClosed => StepErrorCode::SessionClosed,
            DriverError::SnapshotFailed(_) => StepErrorCode::SnapshotFailed,
            _ => StepErrorCode::BrowserError,
        };
        StepFailure { code, detail: e.to_string() }
    }
}

fn fail(code: StepErrorCode, detail: impl Into<String>) -> StepFailure {
    StepFailure { code, detail: detail.into() }
}

/// One browser owned by one agent. Operations take `&mut self`, so a session
/// runs at most one action at a time.
pub struct BrowserSession {
    id: String,
    cfg: SessionConfig,
    params: QuiescenceParams,
    backend: Box<dyn BrowserBackend>,
    tabs: Vec<TabState>,
    active: usize,
    last: Option<ObservationDocument>,
    last_snapshot: Option<RawDomSnapshot>,
    answer: Option<String>,
    closed: bool,
}

impl std::fmt::Debug for BrowserSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BrowserSession")
            .field("id", &self.id)
            .field("tabs", &self.tabs.len())
            .field("active", &self.active)
            .field("closed", &self.closed)
            .finish()
    }
}

impl BrowserSession {
    /// Connects to the configured endpoint and opens one blank tab.
    pub async fn open(cfg: SessionConfig, connector: &dyn BrowserConnector) -> Result<Self, DriverError> {
        cfg.validate()?;
        let backend = connector.connect(&cfg.debug_endpoint).await?;
        Self::with_backend(cfg, backend).await
    }

    pub async fn with_backend(cfg: SessionConfig, mut backend: Box<dyn BrowserBackend>) -> Result<Self, DriverError> {
        cfg.validate()?;
        let tab = backend.new_tab(cfg.viewport).await?;
        backend.install_instrumentation(&tab).await?;
        let params = cfg.quiescence();
        Ok(BrowserSession {
            id: uuid::Uuid::new_v4().to_string(),
            cfg,
            params,
            backend,
            tabs: vec![TabState::new(tab, params)],
            active: 0,
            last: None,
            last_snapshot: None,
            answer: None,
            closed: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn tab_count(&self) -> usize {
        self.tabs.len()
    }

    pub fn active_tab(&self) -> usize {
        self.active
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn last_observation(&self) -> Option<&ObservationDocument> {
        self.last.as_ref()
    }

    /// The raw snapshot behind the last observation.
    pub fn last_snapshot(&self) -> Option<&RawDomSnapshot> {
        self.last_snapshot.as_ref()
    }

    pub fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }

    /// Live request ledger of the active tab.
    pub fn ledger(&self) -> &NetworkActivityLedger {
        &self.tabs[self.active].ledger
    }

    /// Collects, compiles, and caches an observation of the active tab, and
    /// writes the assigned ids back onto the live page.
    pub async fn observe(&mut self) -> Result<ObservationDocument, DriverError> {
        if self.closed {
            return Err(DriverError::SessionClosed);
        }
        let tab = self.tabs[self.active].id.clone();
        let snap = self.backend.snapshot(&tab).await?;
        let compiled = compile_with_bindings(&snap).map_err(|e| DriverError::SnapshotFailed(e.to_string()))?;
        self.backend.bind_ids(&tab, &compiled.bindings).await?;
        self.last = Some(compiled.document.clone());
        self.last_snapshot = Some(snap);
        Ok(compiled.document)
    }

    /// Navigates the active tab and waits for quiescence.
    pub async fn goto(&mut self, url: &str) -> StepOutcome {
        self.execute(&ActionRequest::Navigate { url: url.to_string() }).await
    }

    pub async fn close(&mut self) -> Result<(), DriverError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.backend.shutdown().await
    }

    /// Drains the tab's event queue into its trace, restarting the trace
    /// whenever the document changed.
    async fn pump(&mut self, idx: usize) -> Result<(), DriverError> {
        let id = self.tabs[idx].id.clone();
        let poll = self.backend.poll_network(&id).await?;
        let tab = &mut self.tabs[idx];
        if poll.document != tab.document {
            tab.document = poll.document;
            tab.events.clear();
            tab.ledger.reset();
        }
        for e in poll.events {
            // Duplicate starts are tolerated in the trace the same way the
            // pure verdict tolerates them.
            let _ = tab.ledger.apply(&e);
            tab.events.push(e);
        }
        Ok(())
    }

    fn sleep_ms(&self, ms: f64) -> tokio::time::Sleep {
        let ms = ms.clamp(1.0, self.cfg.poll_interval.as_secs_f64() * 1000.0);
        tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0))
    }

    /// Waits until the active tab is network-idle and two frames have been
    /// rendered with no new document or request, or until the timeout.
    async fn settle(&mut self, action_time: f64) -> Result<QuiescenceVerdict, DriverError> {
        let idx = self.active;
        let deadline = action_time + self.params.timeout;
        loop {
            self.pump(idx).await?;
            let now = self.backend.now_ms();
            match first_idle_instant(&self.tabs[idx].events, action_time, &self.params) {
                QuiescenceVerdict::Idle { at } if at <= now => {
                    let doc = self.tabs[idx].document.clone();
                    let seen = self.tabs[idx].events.len();
                    let tab = self.tabs[idx].id.clone();
                    self.backend.animation_frames(&tab, 2).await?;
                    self.pump(idx).await?;
                    let t = &self.tabs[idx];
                    let fresh_start = t.document == doc
                        && t.events[seen.min(t.events.len())..]
                            .iter()
                            .all(|e| e.kind != crate::quiescence::EventKind::Start);
                    if t.document == doc && fresh_start {
                        return Ok(QuiescenceVerdict::Idle { at });
                    }
                }
                QuiescenceVerdict::Idle { at } => self.sleep_ms(at - now).await,
                QuiescenceVerdict::TimedOut { outstanding } => {
                    if now >= deadline {
                        return Ok(QuiescenceVerdict::TimedOut { outstanding });
                    }
                    self.sleep_ms(deadline - now).await;
                }
            }
        }
    }

    /// Scrolls the target into view, re-observing and retrying when it
    /// cannot be found.
    async fn resolve(&mut self, target: &SemanticId) -> Result<BoxRect, StepFailure> {
        let viewport = BoxRect::new(0.0, 0.0, self.cfg.viewport.width, self.cfg.viewport.height);
        for attempt in 0..=self.cfg.max_retries {
            let tab = self.tabs[self.active].id.clone();
            match self.backend.scroll_into_view(&tab, target).await? {
                Some(rect) if rect.intersects(&viewport) => return Ok(rect),
                Some(rect) => {
                    return Err(fail(
                        StepErrorCode::NotInteractable,
                        format!("{target} is outside the viewport after scrolling ({rect:?})"),
                    ))
                }
                None if attempt < self.cfg.max_retries => {
                    self.observe().await?;
                }
                None => {}
            }
        }
        Err(fail(
            StepErrorCode::StaleElement,
            format!("{target} not found in the live page after {} retries", self.cfg.max_retries),
        ))
    }

    fn check_index(&self, index: usize) -> Result<(), StepFailure> {
        if index >= self.tabs.len() {
            return Err(DriverError::TabIndexOutOfRange { index, count: self.tabs.len() }.into());
        }
        Ok(())
    }

    async fn open_tab(&mut self, url: Option<&str>) -> Result<(), StepFailure> {
        let tab = self.backend.new_tab(self.cfg.viewport).await?;
        self.backend.install_instrumentation(&tab).await?;
        self.tabs.push(TabState::new(tab.clone(), self.params));
        self.active = self.tabs.len() - 1;
        self.backend.activate_tab(&tab).await?;
        if let Some(url) = url {
            self.backend.navigate(&tab, url).await?;
        }
        Ok(())
    }

    /// Adopts tabs the page opened by itself and focuses the newest one.
    async fn adopt_new_tabs(&mut self) -> Result<(), StepFailure> {
        let live = self.backend.list_tabs().await?;
        let mut adopted = None;
        for t in live {
            if !self.tabs.iter().any(|s| s.id == t) {
                self.backend.install_instrumentation(&t).await?;
                self.tabs.push(TabState::new(t.clone(), self.params));
                adopted = Some(t);
            }
        }
        if let Some(t) = adopted {
            self.active = self.tabs.len() - 1;
            self.backend.activate_tab(&t).await?;
        }
        Ok(())
    }

    /// Performs the primitive for `action`. Returns the target box for
    /// element actions.
    async fn perform(&mut self, action: &ActionRequest) -> Result<Option<BoxRect>, StepFailure> {
        let tab = self.tabs[self.active].id.clone();
        match action {
            ActionRequest::ClickElement { target } => {
                let rect = self.resolve(target).await?;
                let (x, y) = rect.center();
                let tab = self.tabs[self.active].id.clone();
                self.backend.mouse_move(&tab, x, y).await?;
                self.backend.mouse_click(&tab, x, y).await?;
                Ok(Some(rect))
            }
            ActionRequest::HoverElement { target } => {
                let rect = self.resolve(target).await?;
                let (x, y) = rect.center();
                let tab = self.tabs[self.active].id.clone();
                self.backend.mouse_move(&tab, x, y).await?;
                tokio::time::sleep(self.cfg.hover_dwell).await;
                Ok(Some(rect))
            }
            ActionRequest::KeyPress { key, target } => {
                let mut rect = None;
                if let Some(target) = target {
                    rect = Some(self.focus(target).await?);
                }
                let tab = self.tabs[self.active].id.clone();
                self.backend.press_key(&tab, key).await?;
                Ok(rect)
            }
            ActionRequest::TypeText { target, text, press_enter } => {
                let rect = self.focus(target).await?;
                let tab = self.tabs[self.active].id.clone();
                self.backend.type_text(&tab, text).await?;
                if *press_enter {
                    self.backend.press_key(&tab, "Enter").await?;
                }
                Ok(Some(rect))
            }
            ActionRequest::ClearInput { target } => {
                let rect = self.resolve(target).await?;
                let tab = self.tabs[self.active].id.clone();
                if !self.backend.clear(&tab, target).await? {
                    return Err(fail(StepErrorCode::StaleElement, format!("{target} vanished before it was cleared")));
                }
                Ok(Some(rect))
            }
            ActionRequest::SelectOption { target, option_id } => {
                let rect = self.resolve(target).await?;
                let tab = self.tabs[self.active].id.clone();
                if !self.backend.select_option(&tab, target, option_id).await? {
                    return Err(fail(StepErrorCode::StaleElement, format!("option {option_id} of {target} not found")));
                }
                Ok(Some(rect))
            }
            ActionRequest::Navigate { url } => {
                self.backend.navigate(&tab, url).await?;
                Ok(None)
            }
            ActionRequest::Back | ActionRequest::Forward => {
                let delta = if matches!(action, ActionRequest::Back) { -1 } else { 1 };
                self.backend.history(&tab, delta).await?;
                Ok(None)
            }
            ActionRequest::Refresh => {
                self.backend.reload(&tab).await?;
                Ok(None)
            }
            ActionRequest::NewTab { url } => {
                self.open_tab(url.as_deref()).await?;
                Ok(None)
            }
            ActionRequest::SwitchTab { index } => {
                self.check_index(*index)?;
                self.active = *index;
                let tab = self.tabs[*index].id.clone();
                self.backend.activate_tab(&tab).await?;
                Ok(None)
            }
            ActionRequest::CloseTab { index } => {
                self.check_index(*index)?;
                if self.tabs.len() == 1 {
                    return Err(fail(StepErrorCode::TabIndexOutOfRange, "cannot close the only open tab"));
                }
                let closed = self.tabs.remove(*index);
                self.backend.close_tab(&closed.id).await?;
                if *index < self.active || self.active >= self.tabs.len() {
                    self.active = self.active.saturating_sub(1);
                }
                let tab = self.tabs[self.active].id.clone();
                self.backend.activate_tab(&tab).await?;
                Ok(None)
            }
            ActionRequest::Terminate { .. } => Ok(None),
        }
    }

    async fn focus(&mut self, target: &SemanticId) -> Result<BoxRect, StepFailure> {
        let rect = self.resolve(target).await?;
        let tab = self.tabs[self.active].id.clone();
        if !self.backend.focus(&tab, target).await? {
            return Err(fail(StepErrorCode::StaleElement, format!("{target} vanished before it was focused")));
        }
        Ok(rect)
    }

    /// Executes one action and returns the post-quiescence observation.
    ///
    /// Recoverable failures still carry a fresh observation so the caller can
    /// continue from the page as it is.
    pub async fn execute(&mut self, action: &ActionRequest) -> StepOutcome {
        if self.closed {
            return StepOutcome::error(StepErrorCode::SessionClosed, "session is closed");
        }
        if let ActionRequest::Terminate { answer } = action {
            self.answer = answer.clone();
            let obs = self.last.clone();
            let closed = self.close().await;
            return StepOutcome {
                status: StepStatus::Ok,
                observation: obs,
                error_detail: closed.err().map(|e| e.to_string()),
                timing: StepTiming::default(),
                answer: answer.clone(),
                target_box: None,
            };
        }

        let started = Instant::now();
        let action_time = self.backend.now_ms();
        // Events from before the action still count: a request started just
        // earlier can keep the page busy.
        if let Err(e) = self.pump(self.active).await {
            return self.recover(e.into(), started).await;
        }
        let performed = self.perform(action).await;
        let target_box = match performed {
            Ok(rect) => rect,
            Err(f) => return self.recover(f, started).await,
        };
        if let Err(f) = self.adopt_new_tabs().await {
            return self.recover(f, started).await;
        }
        let action_ms = started.elapsed().as_secs_f64() * 1000.0;

        let waited = Instant::now();
        let verdict = match self.settle(action_time).await {
            Ok(v) => v,
            Err(e) => return self.recover(e.into(), started).await,
        };
        let quiescence_ms = waited.elapsed().as_secs_f64() * 1000.0;
        let timing = StepTiming { action_ms, quiescence_ms };
        let observation = match self.observe().await {
            Ok(o) => o,
            Err(e) => {
                let mut out: StepOutcome = StepFailure::from(e).into_outcome();
                out.timing = timing;
                return out;
            }
        };
        let (status, error_detail) = match verdict {
            QuiescenceVerdict::Idle { .. } => (StepStatus::Ok, None),
            QuiescenceVerdict::TimedOut { outstanding } => (
                StepStatus::Error(StepErrorCode::Timeout),
                Some(format!(
                    "page not idle within {} ms; outstanding requests: {}",
                    self.params.timeout,
                    outstanding.join(", ")
                )),
            ),
        };
        StepOutcome { status, observation: Some(observation), error_detail, timing, answer: None, target_box }
    }

    /// Builds an error outcome with whatever observation can still be taken.
    async fn recover(&mut self, f: StepFailure, started: Instant) -> StepOutcome {
        let mut out = f.into_outcome();
        out.timing.action_ms = started.elapsed().as_secs_f64() * 1000.0;
        if !self.closed {
            out.observation = self.observe().await.ok();
        }
        out
    }
}

impl StepFailure {
    fn into_outcome(self) -> StepOutcome {
        StepOutcome::error(self.code, self.detail)
    }
}
