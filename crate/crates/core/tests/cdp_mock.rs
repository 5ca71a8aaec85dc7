//! The remote-debugging backend against a scripted in-process endpoint.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use webenv_core::driver::cdp::CdpConnector;
use webenv_core::driver::{StepErrorCode, TabId};
use webenv_core::obs::corpus::pages;
use webenv_core::{compile_observation, ActionRequest, BrowserSession, RawDomSnapshot, SessionConfig, StepStatus};

type Log = Arc<Mutex<Vec<Value>>>;

struct Mock {
    endpoint: String,
    log: Log,
}

impl Mock {
    fn calls(&self, method: &str) -> Vec<Value> {
        self.log.lock().unwrap().iter().filter(|m| m["method"] == method).cloned().collect()
    }

    fn methods(&self) -> Vec<String> {
        self.log.lock().unwrap().iter().map(|m| m["method"].as_str().unwrap().to_string()).collect()
    }
}

fn reply(req: &Value, snapshot: &RawDomSnapshot, fail_navigation: bool) -> Value {
    let result = match req["method"].as_str().unwrap() {
        "Target.createBrowserContext" => json!({"browserContextId": "ctx-1"}),
        "Target.createTarget" => json!({"targetId": "tab-1"}),
        "Target.attachToTarget" => json!({"sessionId": "sess-1"}),
        "Target.getTargets" => json!({"targetInfos": [
            {"targetId": "tab-1", "type": "page", "browserContextId": "ctx-1"},
            {"targetId": "other", "type": "page", "browserContextId": "ctx-9"},
        ]}),
        "Page.navigate" if fail_navigation => json!({"frameId": "f", "errorText": "net::ERR_CONNECTION_REFUSED"}),
        "Page.navigate" => json!({"frameId": "f"}),
        "Runtime.evaluate" => {
            let expr = req["params"]["expression"].as_str().unwrap();
            let value = if expr.contains("drain()") {
                json!({"document": "doc-1", "events": []})
            } else if expr.contains("collect()") {
                serde_json::to_value(snapshot).unwrap()
            } else if expr.contains("scrollTo(") {
                json!({"x": 10.0, "y": 20.0, "width": 100.0, "height": 40.0})
            } else {
                json!(true)
            };
            json!({"result": {"type": "object", "value": value}})
        }
        _ => json!({}),
    };
    let mut out = json!({"id": req["id"], "result": result});
    if let Some(s) = req.get("sessionId") {
        out["sessionId"] = s.clone();
    }
    out
}

async fn mock(snapshot: RawDomSnapshot, fail_navigation: bool) -> Mock {
    let ws_listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let ws_url = format!("ws://{}/devtools/browser/mock", ws_listener.local_addr().unwrap());
    let log: Log = Arc::default();
    let seen = log.clone();
    tokio::spawn(async move {
        while let Ok((tcp, _)) = ws_listener.accept().await {
            let seen = seen.clone();
            let snapshot = snapshot.clone();
            tcp.set_nodelay(true).unwrap();
            tokio::spawn(async move {
                let mut ws = tokio_tungstenite::accept_async(tcp).await.unwrap();
                while let Some(Ok(msg)) = ws.next().await {
                    let Message::Text(text) = msg else { continue };
                    let req: Value = serde_json::from_str(&text).unwrap();
                    seen.lock().unwrap().push(req.clone());
                    // Unsolicited events interleave with replies.
                    let event = json!({"method": "Page.frameNavigated", "params": {}});
                    if ws.send(Message::Text(event.to_string())).await.is_err() {
                        break;
                    }
                    let out = reply(&req, &snapshot, fail_navigation);
                    if ws.send(Message::Text(out.to_string())).await.is_err() {
                        break;
                    }
                }
            });
        }
    });
    let http = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let endpoint = format!("http://{}", http.local_addr().unwrap());
    let app =
        Router::new().route("/json/version", get(move || async move { Json(json!({"webSocketDebuggerUrl": ws_url})) }));
    tokio::spawn(async move { axum::serve(http, app).await.unwrap() });
    Mock { endpoint, log }
}

fn cfg(endpoint: &str) -> SessionConfig {
    SessionConfig {
        debug_endpoint: endpoint.into(),
        idle_window: Duration::from_millis(20),
        timeout: Duration::from_secs(5),
        poll_interval: Duration::from_millis(5),
        ..Default::default()
    }
}

fn login() -> RawDomSnapshot {
    pages().into_iter().find(|p| p.name == "login-form").unwrap().snapshot
}

#[tokio::test]
async fn session_speaks_the_protocol() {
    let snapshot = login();
    let m = mock(snapshot.clone(), false).await;
    let mut s = BrowserSession::open(cfg(&m.endpoint), &CdpConnector).await.unwrap();
    let out = s.goto("http://127.0.0.1:9/login").await;
    assert_eq!(out.status, StepStatus::Ok, "{out:?}");
    let expected = compile_observation(&snapshot).unwrap();
    assert_eq!(out.observation.unwrap(), expected, "live matches offline compile");

    let ctx = &m.calls("Target.createBrowserContext")[0];
    assert!(ctx.get("sessionId").is_none());
    let target = &m.calls("Target.createTarget")[0];
    assert_eq!(target["params"]["browserContextId"], "ctx-1");
    let attach = &m.calls("Target.attachToTarget")[0];
    assert_eq!(attach["params"], json!({"targetId": "tab-1", "flatten": true}));
    let inject = &m.calls("Page.addScriptToEvaluateOnNewDocument")[0];
    assert_eq!(inject["sessionId"], "sess-1");
    assert!(inject["params"]["source"].as_str().unwrap().contains("__webenv"));
    let nav = &m.calls("Page.navigate")[0];
    assert_eq!(nav["params"]["url"], "http://127.0.0.1:9/login");
    assert_eq!(nav["sessionId"], "sess-1");
    let viewport = &m.calls("Emulation.setDeviceMetricsOverride")[0];
    assert_eq!(viewport["params"]["width"], 1280);

    let button = expected.clickables[0].id.clone();
    let out = s.execute(&ActionRequest::ClickElement { target: button }).await;
    assert_eq!(out.status, StepStatus::Ok, "{out:?}");
    let clicks = m.calls("Input.dispatchMouseEvent");
    let kinds: Vec<_> = clicks.iter().map(|c| c["params"]["type"].as_str().unwrap()).collect();
    assert!(kinds.ends_with(&["mousePressed", "mouseReleased"]), "{kinds:?}");
    let press = &clicks[clicks.len() - 2]["params"];
    assert_eq!((press["x"].as_f64(), press["y"].as_f64()), (Some(60.0), Some(40.0)), "box centre");

    let out = s.execute(&ActionRequest::KeyPress { key: "Enter".into(), target: None }).await;
    assert_eq!(out.status, StepStatus::Ok);
    let keys = m.calls("Input.dispatchKeyEvent");
    assert_eq!(keys[keys.len() - 2]["params"]["windowsVirtualKeyCode"], 13);

    s.close().await.unwrap();
    let dispose = m.calls("Target.disposeBrowserContext");
    assert_eq!(dispose[0]["params"]["browserContextId"], "ctx-1");
    let ids: Vec<u64> = m.log.lock().unwrap().iter().map(|r| r["id"].as_u64().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), ids.len(), "request ids are unique");
}

#[tokio::test]
async fn navigation_errors_surface() {
    let m = mock(login(), true).await;
    let mut s = BrowserSession::open(cfg(&m.endpoint), &CdpConnector).await.unwrap();
    let out = s.goto("http://127.0.0.1:9/").await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::NavigationFailed), "{out:?}");
    assert!(out.error_detail.unwrap().contains("ERR_CONNECTION_REFUSED"));
    assert!(m.methods().contains(&"Page.navigate".to_string()));
}

#[tokio::test]
async fn tabs_are_scoped_to_the_session_context() {
    use webenv_core::driver::BrowserConnector;
    let m = mock(login(), false).await;
    let mut b = CdpConnector.connect(&m.endpoint).await.unwrap();
    let tab: TabId = b.new_tab(Default::default()).await.unwrap();
    let tabs = b.list_tabs().await.unwrap();
    assert_eq!(tabs, vec![tab.clone()], "targets of other contexts are ignored");
    b.close_tab(&tab).await.unwrap();
    assert_eq!(m.calls("Target.closeTarget")[0]["params"]["targetId"], "tab-1");
}

#[tokio::test]
async fn ws_endpoints_skip_discovery() {
    let m = mock(login(), false).await;
    let version: Value = reqwest::get(format!("{}/json/version", m.endpoint)).await.unwrap().json().await.unwrap();
    let ws = version["webSocketDebuggerUrl"].as_str().unwrap();
    let s = BrowserSession::open(cfg(ws), &CdpConnector).await.unwrap();
    assert_eq!(s.tab_count(), 1);
}
