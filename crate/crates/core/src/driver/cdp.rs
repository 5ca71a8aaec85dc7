//! Browser backend speaking the remote-debugging protocol over WebSocket.
//!
//! Each session runs in its own browser context. Tabs are page targets
//! attached in flat mode, so every command carries the tab's session id.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

use super::{BrowserBackend, BrowserConnector, DriverError, NetworkPoll, TabId, INSTRUMENTATION_JS};
use crate::obs::{BoxRect, IdBinding, RawDomSnapshot, SemanticId, Size};
use crate::quiescence::NetworkEvent;

const CALL_TIMEOUT: Duration = Duration::from_secs(60);

type Reply = Result<Value, String>;

struct Connection {
    tx: mpsc::UnboundedSender<Message>,
    pending: Arc<Mutex<HashMap<u64, oneshot::Sender<Reply>>>>,
    next_id: AtomicU64,
    reader: tokio::task::JoinHandle<()>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl Connection {
    async fn open(ws_url: &str) -> Result<Self, DriverError> {
        // Commands are small request/reply frames; Nagle would stall each one.
        let (ws, _) = tokio_tungstenite::connect_async_with_config(ws_url, None, true)
            .await
            .map_err(|e| DriverError::ConnectFailed(format!("{ws_url}: {e}")))?;
        let (mut sink, mut stream) = ws.split();
        let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
        let pending: Arc<Mutex<HashMap<u64, oneshot::Sender<Reply>>>> = Arc::default();
        let table = pending.clone();
        let reader = tokio::spawn(async move {
            loop {
                tokio::select! {
                    out = rx.recv() => match out {
                        Some(m) => if sink.send(m).await.is_err() { break },
                        None => break,
                    },
                    msg = stream.next() => match msg {
                        Some(Ok(Message::Text(t))) => dispatch_reply(&table, &t),
                        Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                        Some(Ok(_)) => {}
                    },
                }
            }
            for (_, waiter) in table.lock().unwrap().drain() {
                let _ = waiter.send(Err("connection closed".into()));
            }
        });
        Ok(Connection { tx, pending, next_id: AtomicU64::new(1), reader })
    }

    async fn call(&self, method: &str, params: Value, session: Option<&str>) -> Result<Value, DriverError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut msg = json!({ "id": id, "method": method, "params": params });
        if let Some(s) = session {
            msg["sessionId"] = Value::String(s.to_string());
        }
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id, tx);
        self.tx.send(Message::Text(msg.to_string())).map_err(|_| DriverError::Protocol("connection closed".into()))?;
        match tokio::time::timeout(CALL_TIMEOUT, rx).await {
            Ok(Ok(Ok(v))) => Ok(v),
            Ok(Ok(Err(e))) => Err(DriverError::Protocol(format!("{method}: {e}"))),
            Ok(Err(_)) => Err(DriverError::Protocol("connection closed".into())),
            Err(_) => {
                self.pending.lock().unwrap().remove(&id);
                Err(DriverError::Protocol(format!("{method}: no reply within {CALL_TIMEOUT:?}")))
            }
        }
    }
}

fn dispatch_reply(table: &Mutex<HashMap<u64, oneshot::Sender<Reply>>>, text: &str) {
    let Ok(v) = serde_json::from_str::<Value>(text) else { return };
    // Messages without an id are protocol events; nothing subscribes to them.
    let Some(id) = v.get("id").and_then(Value::as_u64) else { return };
    let Some(waiter) = table.lock().unwrap().remove(&id) else { return };
    let reply = match v.get("error") {
        Some(e) => Err(e.get("message").and_then(Value::as_str).unwrap_or("unknown error").to_string()),
        None => Ok(v.get("result").cloned().unwrap_or(Value::Null)),
    };
    let _ = waiter.send(reply);
}

/// Resolves `http://host:port` to the browser's WebSocket URL; WebSocket
/// URLs pass through.
async fn websocket_url(endpoint: &str) -> Result<String, DriverError> {
    if endpoint.starts_with("ws://") || endpoint.starts_with("wss://") {
        return Ok(endpoint.to_string());
    }
    #[derive(Deserialize)]
    struct Version {
        #[serde(rename = "webSocketDebuggerUrl")]
        ws: String,
    }
    let url = format!("{}/json/version", endpoint.trim_end_matches('/'));
    let resp = reqwest::get(&url).await.map_err(|e| DriverError::ConnectFailed(format!("{url}: {e}")))?;
    let v: Version = resp.json().await.map_err(|e| DriverError::ConnectFailed(format!("{url}: {e}")))?;
    Ok(v.ws)
}

pub struct CdpConnector;

#[async_trait]
impl BrowserConnector for CdpConnector {
    async fn connect(&self, endpoint: &str) -> Result<Box<dyn BrowserBackend>, DriverError> {
        Ok(Box::new(CdpBackend::connect(endpoint).await?))
    }
}

pub struct CdpBackend {
    conn: Connection,
    context: String,
    /// Target id to flat-mode session id.
    sessions: HashMap<TabId, String>,
    viewport: Size,
}

#[derive(Deserialize)]
struct DrainReply {
    document: String,
    events: Vec<NetworkEvent>,
}

fn key_definition(key: &str) -> (String, String, u32, Option<String>) {
    let named: &[(&str, &str, u32, Option<&str>)] = &[
        ("Enter", "Enter", 13, Some("\r")),
        ("Escape", "Escape", 27, None),
        ("Tab", "Tab", 9, None),
        ("ArrowUp", "ArrowUp", 38, None),
        ("ArrowDown", "ArrowDown", 40, None),
        ("ArrowLeft", "ArrowLeft", 37, None),
        ("ArrowRight", "ArrowRight", 39, None),
        ("Backspace", "Backspace", 8, None),
        ("Delete", "Delete", 46, None),
        ("Home", "Home", 36, None),
        ("End", "End", 35, None),
        ("PageUp", "PageUp", 33, None),
        ("PageDown", "PageDown", 34, None),
    ];
    if let Some((k, code, vk, text)) = named.iter().find(|(k, ..)| *k == key) {
        return (k.to_string(), code.to_string(), *vk, text.map(String::from));
    }
    let ch = key.chars().next().unwrap_or(' ');
    let code = if ch.is_ascii_alphabetic() {
        format!("Key{}", ch.to_ascii_uppercase())
    } else if ch.is_ascii_digit() {
        format!("Digit{ch}")
    } else {
        String::new()
    };
    let vk = if ch.is_ascii_alphanumeric() { ch.to_ascii_uppercase() as u32 } else { 0 };
    (key.to_string(), code, vk, Some(key.to_string()))
}

impl CdpBackend {
    pub async fn connect(endpoint: &str) -> Result<Self, DriverError> {
        let ws = websocket_url(endpoint).await?;
        let conn = Connection::open(&ws).await?;
        let ctx = conn
            .call("Target.createBrowserContext", json!({ "disposeOnDetach": true }), None)
            .await
            .map_err(|e| DriverError::ConnectFailed(e.to_string()))?;
        let context = ctx
            .get("browserContextId")
            .and_then(Value::as_str)
            .ok_or_else(|| DriverError::ConnectFailed("no browser context id".into()))?
            .to_string();
        Ok(CdpBackend { conn, context, sessions: HashMap::new(), viewport: Size::default() })
    }

    fn session(&self, tab: &TabId) -> Result<&str, DriverError> {
        self.sessions.get(tab).map(|s| s.as_str()).ok_or_else(|| DriverError::Protocol(format!("unknown tab {tab}")))
    }

    async fn call(&self, tab: &TabId, method: &str, params: Value) -> Result<Value, DriverError> {
        let s = self.session(tab)?.to_string();
        self.conn.call(method, params, Some(&s)).await
    }

    async fn attach(&mut self, target: &str) -> Result<(), DriverError> {
        let r = self.conn.call("Target.attachToTarget", json!({ "targetId": target, "flatten": true }), None).await?;
        let session = r
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| DriverError::Protocol("attachToTarget returned no session".into()))?
            .to_string();
        self.sessions.insert(target.to_string(), session);
        let tab = target.to_string();
        self.call(&tab, "Page.enable", json!({})).await?;
        self.call(
            &tab,
            "Emulation.setDeviceMetricsOverride",
            json!({
                "width": self.viewport.width as u32,
                "height": self.viewport.height as u32,
                "deviceScaleFactor": 1,
                "mobile": false
            }),
        )
        .await?;
        Ok(())
    }

    /// Evaluates an expression in the tab and returns its value.
    async fn eval(&self, tab: &TabId, expression: &str, await_promise: bool) -> Result<Value, DriverError> {
        let r = self
            .call(
                tab,
                "Runtime.evaluate",
                json!({ "expression": expression, "returnByValue": true, "awaitPromise": await_promise }),
            )
            .await?;
        if let Some(ex) = r.get("exceptionDetails") {
            let text = ex
                .pointer("/exception/description")
                .or_else(|| ex.get("text"))
                .and_then(Value::as_str)
                .unwrap_or("script exception");
            return Err(DriverError::Protocol(text.to_string()));
        }
        Ok(r.pointer("/result/value").cloned().unwrap_or(Value::Null))
    }

    async fn helper(&self, tab: &TabId, call: &str) -> Result<Value, DriverError> {
        self.eval(tab, &format!("window.__webenv ? window.__webenv.{call} : null"), false).await
    }

    async fn key_event(&self, tab: &TabId, key: &str) -> Result<(), DriverError> {
        let (key, code, vk, text) = key_definition(key);
        let mut down = json!({
            "type": if text.is_some() { "keyDown" } else { "rawKeyDown" },
            "key": key,
            "code": code,
            "windowsVirtualKeyCode": vk,
        });
        if let Some(t) = &text {
            down["text"] = Value::String(t.clone());
            down["unmodifiedText"] = Value::String(t.clone());
        }
        self.call(tab, "Input.dispatchKeyEvent", down).await?;
        self.call(
            tab,
            "Input.dispatchKeyEvent",
            json!({ "type": "keyUp", "key": key, "code": code, "windowsVirtualKeyCode": vk }),
        )
        .await?;
        Ok(())
    }
}

fn quoted(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

#[async_trait]
impl BrowserBackend for CdpBackend {
    fn now_ms(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64() * 1000.0).unwrap_or(0.0)
    }

    async fn new_tab(&mut self, viewport: Size) -> Result<TabId, DriverError> {
        self.viewport = viewport;
        let r = self
            .conn
            .call("Target.createTarget", json!({ "url": "about:blank", "browserContextId": self.context }), None)
            .await?;
        let target = r
            .get("targetId")
            .and_then(Value::as_str)
            .ok_or_else(|| DriverError::Protocol("createTarget returned no target".into()))?
            .to_string();
        self.attach(&target).await?;
        Ok(target)
    }

    async fn close_tab(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.conn.call("Target.closeTarget", json!({ "targetId": tab }), None).await?;
        self.sessions.remove(tab);
        Ok(())
    }

    async fn activate_tab(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.conn.call("Target.activateTarget", json!({ "targetId": tab }), None).await?;
        Ok(())
    }

    async fn list_tabs(&mut self) -> Result<Vec<TabId>, DriverError> {
        let r = self.conn.call("Target.getTargets", json!({}), None).await?;
        let mut out = Vec::new();
        for info in r.get("targetInfos").and_then(Value::as_array).into_iter().flatten() {
            let same_ctx = info.get("browserContextId").and_then(Value::as_str) == Some(self.context.as_str());
            let is_page = info.get("type").and_then(Value::as_str) == Some("page");
            if let (true, true, Some(id)) = (same_ctx, is_page, info.get("targetId").and_then(Value::as_str)) {
                if !self.sessions.contains_key(id) {
                    self.attach(id).await?;
                }
                out.push(id.to_string());
            }
        }
        Ok(out)
    }

    async fn install_instrumentation(&mut self, tab: &TabId) -> Result<(), DriverError> {
        let inj = |e: DriverError| DriverError::InjectionFailed(e.to_string());
        self.call(tab, "Page.addScriptToEvaluateOnNewDocument", json!({ "source": INSTRUMENTATION_JS }))
            .await
            .map_err(inj)?;
        self.eval(tab, INSTRUMENTATION_JS, false).await.map_err(inj)?;
        Ok(())
    }

    async fn navigate(&mut self, tab: &TabId, url: &str) -> Result<(), DriverError> {
        let r = self
            .call(tab, "Page.navigate", json!({ "url": url }))
            .await
            .map_err(|e| DriverError::NavigationFailed(e.to_string()))?;
        match r.get("errorText").and_then(Value::as_str) {
            Some(err) if !err.is_empty() => Err(DriverError::NavigationFailed(format!("{url}: {err}"))),
            _ => Ok(()),
        }
    }

    async fn history(&mut self, tab: &TabId, delta: i32) -> Result<bool, DriverError> {
        let h = self.call(tab, "Page.getNavigationHistory", json!({})).await?;
        let current = h.get("currentIndex").and_then(Value::as_i64).unwrap_or(0);
        let entries = h.get("entries").and_then(Value::as_array).cloned().unwrap_or_default();
        let target = current + delta as i64;
        let Some(entry) = usize::try_from(target).ok().and_then(|i| entries.get(i)) else { return Ok(false) };
        let id = entry.get("id").cloned().unwrap_or(Value::Null);
        self.call(tab, "Page.navigateToHistoryEntry", json!({ "entryId": id })).await?;
        Ok(true)
    }

    async fn reload(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.call(tab, "Page.reload", json!({})).await?;
        Ok(())
    }

    async fn poll_network(&mut self, tab: &TabId) -> Result<NetworkPoll, DriverError> {
        // During a navigation the old context may be gone; treat as no
        // instrumented document rather than an error.
        let v = match self.helper(tab, "drain()").await {
            Ok(v) => v,
            Err(DriverError::Protocol(_)) => Value::Null,
            Err(e) => return Err(e),
        };
        if v.is_null() {
            return Ok(NetworkPoll { document: None, events: Vec::new() });
        }
        let d: DrainReply = serde_json::from_value(v).map_err(|e| DriverError::Protocol(format!("drain: {e}")))?;
        Ok(NetworkPoll { document: Some(d.document), events: d.events })
    }

    async fn snapshot(&mut self, tab: &TabId) -> Result<RawDomSnapshot, DriverError> {
        let v = self.helper(tab, "collect()").await.map_err(|e| DriverError::SnapshotFailed(e.to_string()))?;
        if v.is_null() {
            return Err(DriverError::SnapshotFailed("collection script not installed".into()));
        }
        serde_json::from_value(v).map_err(|e| DriverError::SnapshotFailed(e.to_string()))
    }

    async fn bind_ids(&mut self, tab: &TabId, bindings: &[IdBinding]) -> Result<(), DriverError> {
        let payload = serde_json::to_string(bindings).expect("bindings serialize");
        self.helper(tab, &format!("bind({payload})")).await?;
        Ok(())
    }

    async fn scroll_into_view(&mut self, tab: &TabId, id: &SemanticId) -> Result<Option<BoxRect>, DriverError> {
        let v = self.helper(tab, &format!("scrollTo({})", quoted(id.as_str()))).await?;
        if v.is_null() {
            return Ok(None);
        }
        serde_json::from_value(v).map(Some).map_err(|e| DriverError::Protocol(format!("scrollTo: {e}")))
    }

    async fn mouse_move(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError> {
        self.call(tab, "Input.dispatchMouseEvent", json!({ "type": "mouseMoved", "x": x, "y": y })).await?;
        Ok(())
    }

    async fn mouse_click(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError> {
        for kind in ["mousePressed", "mouseReleased"] {
            self.call(
                tab,
                "Input.dispatchMouseEvent",
                json!({ "type": kind, "x": x, "y": y, "button": "left", "clickCount": 1 }),
            )
            .await?;
        }
        Ok(())
    }

    async fn focus(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError> {
        Ok(self.helper(tab, &format!("focus({})", quoted(id.as_str()))).await? == Value::Bool(true))
    }

    async fn press_key(&mut self, tab: &TabId, key: &str) -> Result<(), DriverError> {
        self.key_event(tab, key).await
    }

    async fn type_text(&mut self, tab: &TabId, text: &str) -> Result<(), DriverError> {
        for ch in text.chars() {
            self.key_event(tab, &ch.to_string()).await?;
        }
        Ok(())
    }

    async fn clear(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError> {
        Ok(self.helper(tab, &format!("clear({})", quoted(id.as_str()))).await? == Value::Bool(true))
    }

    async fn select_option(
        &mut self,
        tab: &TabId,
        select: &SemanticId,
        option: &SemanticId,
    ) -> Result<bool, DriverError> {
        let call = format!("select({}, {})", quoted(select.as_str()), quoted(option.as_str()));
        Ok(self.helper(tab, &call).await? == Value::Bool(true))
    }

    async fn animation_frames(&mut self, tab: &TabId, n: u32) -> Result<(), DriverError> {
        self.eval(tab, &format!("window.__webenv ? window.__webenv.frames({n}) : true"), true).await?;
        Ok(())
    }

    async fn shutdown(&mut self) -> Result<(), DriverError> {
        self.sessions.clear();
        self.conn.call("Target.disposeBrowserContext", json!({ "browserContextId": self.context }), None).await?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_definitions() {
        assert_eq!(key_definition("Enter"), ("Enter".into(), "Enter".into(), 13, Some("\r".into())));
        assert_eq!(key_definition("a"), ("a".into(), "KeyA".into(), 65, Some("a".into())));
        assert_eq!(key_definition("7").1, "Digit7");
        assert_eq!(key_definition("Escape").3, None);
    }

    #[test]
    fn replies_are_routed_by_id() {
        let table = Mutex::new(HashMap::new());
        let (tx, mut rx) = oneshot::channel();
        table.lock().unwrap().insert(4, tx);
        dispatch_reply(&table, r#"{"method":"Page.loadEventFired","params":{}}"#);
        assert!(rx.try_recv().is_err());
        dispatch_reply(&table, r#"{"id":4,"error":{"code":-32000,"message":"boom"}}"#);
        assert_eq!(rx.try_recv().unwrap(), Err("boom".to_string()));
    }

    #[tokio::test]
    async fn unreachable_endpoint_fails_to_connect() {
        let err = CdpBackend::connect("ws://127.0.0.1:1/devtools/browser/x").await.err().unwrap();
        assert!(matches!(err, DriverError::ConnectFailed(_)));
    }
}
