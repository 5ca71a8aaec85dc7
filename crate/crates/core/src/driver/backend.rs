use async_trait::async_trait;

use super::DriverError;
use crate::obs::{BoxRect, IdBinding, RawDomSnapshot, SemanticId, Size};
use crate::quiescence::NetworkEvent;

/// Opaque per-tab handle issued by a backend.
pub type TabId = String;

/// Network events drained from one tab since the previous poll.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPoll {
    /// Identifier of the document that produced the events. Changes on every
    /// navigation. `None` while no instrumented document is present.
    pub document: Option<String>,
    pub events: Vec<NetworkEvent>,
}

/// The primitive operations a browser must offer. One implementation speaks
/// the remote-debugging protocol, another simulates pages in-process.
///
/// Elements are addressed by the `data-semantic-id` attribute written back
/// with [`BrowserBackend::bind_ids`].
#[async_trait]
pub trait BrowserBackend: Send {
    /// Page clock in milliseconds; shares its origin with event timestamps.
    fn now_ms(&self) -> f64;

    async fn new_tab(&mut self, viewport: Size) -> Result<TabId, DriverError>;
    async fn close_tab(&mut self, tab: &TabId) -> Result<(), DriverError>;
    async fn activate_tab(&mut self, tab: &TabId) -> Result<(), DriverError>;
    /// Tabs currently open, including ones the page opened itself.
    async fn list_tabs(&mut self) -> Result<Vec<TabId>, DriverError>;
    /// Arms the instrumentation for every future document of the tab and for
    /// the current one.
    async fn install_instrumentation(&mut self, tab: &TabId) -> Result<(), DriverError>;

    async fn navigate(&mut self, tab: &TabId, url: &str) -> Result<(), DriverError>;
    /// Moves through session history; returns false when there is no entry.
    async fn history(&mut self, tab: &TabId, delta: i32) -> Result<bool, DriverError>;
    async fn reload(&mut self, tab: &TabId) -> Result<(), DriverError>;

    async fn poll_network(&mut self, tab: &TabId) -> Result<NetworkPoll, DriverError>;
    async fn snapshot(&mut self, tab: &TabId) -> Result<RawDomSnapshot, DriverError>;
    async fn bind_ids(&mut self, tab: &TabId, bindings: &[IdBinding]) -> Result<(), DriverError>;

    /// Scrolls the element into view and returns its box in viewport
    /// coordinates, or `None` when no element carries the id.
    async fn scroll_into_view(&mut self, tab: &TabId, id: &SemanticId) -> Result<Option<BoxRect>, DriverError>;
    async fn mouse_move(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError>;
    async fn mouse_click(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError>;
    async fn focus(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError>;
    /// Sends one key press to the focused element.
    async fn press_key(&mut self, tab: &TabId, key: &str) -> Result<(), DriverError>;
    /// Types text into the focused element one key event per character.
    async fn type_text(&mut self, tab: &TabId, text: &str) -> Result<(), DriverError>;
    async fn clear(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError>;
    async fn select_option(
        &mut self,
        tab: &TabId,
        select: &SemanticId,
        option: &SemanticId,
    ) -> Result<bool, DriverError>;
    /// Resolves after `n` rendered frames.
    async fn animation_frames(&mut self, tab: &TabId, n: u32) -> Result<(), DriverError>;

    async fn shutdown(&mut self) -> Result<(), DriverError>;
}

/// Creates backends for new sessions.
#[async_trait]
pub trait BrowserConnector: Send + Sync {
    async fn connect(&self, endpoint: &str) -> Result<Box<dyn BrowserBackend>, DriverError>;
}
