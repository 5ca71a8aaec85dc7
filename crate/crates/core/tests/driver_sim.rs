use std::sync::Arc;
use std::time::Duration;

use webenv_core::action::ActionRequest;
use webenv_core::driver::fixtures::demo_site;
use webenv_core::driver::sim::{SimConnector, SimHandle};
use webenv_core::driver::{BrowserSession, DriverError, SessionConfig, StepErrorCode, StepStatus};
use webenv_core::obs::{compile_observation, BoxRect, SemanticId};

const BASE: &str = "http://shop.test";

fn id(s: &str) -> SemanticId {
    SemanticId::new(s).unwrap()
}

fn connector() -> SimConnector {
    SimConnector::new(Arc::new(demo_site()))
}

async fn open(conn: &SimConnector) -> (BrowserSession, SimHandle) {
    let s = BrowserSession::open(SessionConfig::default(), conn).await.unwrap();
    let h = conn.sessions().last().cloned().unwrap();
    (s, h)
}

async fn at(conn: &SimConnector, path: &str) -> (BrowserSession, SimHandle) {
    let (mut s, h) = open(conn).await;
    let out = s.goto(&format!("{BASE}{path}")).await;
    assert!(out.is_ok(), "{out:?}");
    (s, h)
}

fn click(target: &str) -> ActionRequest {
    ActionRequest::ClickElement { target: id(target) }
}

#[tokio::test(start_paused = true)]
async fn open_session_has_one_blank_tab() {
    let conn = connector();
    let (mut s, _) = open(&conn).await;
    assert_eq!(s.tab_count(), 1);
    assert_eq!(s.active_tab(), 0);
    let doc = s.observe().await.unwrap();
    assert!(doc.clickables.is_empty() && doc.hoverables.is_empty() && doc.inputs.is_empty() && doc.selects.is_empty());
    let snap = s.last_snapshot().unwrap();
    assert_eq!((snap.viewport.width, snap.viewport.height), (1280.0, 720.0));
}

#[tokio::test(start_paused = true)]
async fn unreachable_endpoint_is_connect_failed() {
    let cfg = SessionConfig { debug_endpoint: "unreachable:9222".into(), ..Default::default() };
    let err = BrowserSession::open(cfg, &connector()).await.unwrap_err();
    assert!(matches!(err, DriverError::ConnectFailed(_)));
}

#[tokio::test(start_paused = true)]
async fn hover_listener_marks_element_hoverable() {
    let conn = connector();
    let (mut s, _) = at(&conn, "/menu").await;
    let doc = s.last_observation().unwrap().clone();
    assert_eq!(doc.hoverables, vec![id("products")]);
    assert!(doc.html.contains(r#"data-maybe-hoverable="true""#));
    assert!(!doc.html.contains("Mugs"));
    let out = s.execute(&ActionRequest::HoverElement { target: id("products") }).await;
    assert!(out.is_ok());
    let after = out.observation.unwrap();
    assert!(after.html.contains("Mugs") && after.html.contains("Shirts"));
    assert!(out.timing.action_ms >= 100.0, "hover dwell: {:?}", out.timing);
}

#[tokio::test(start_paused = true)]
async fn pointer_cursor_div_is_clickable() {
    let conn = connector();
    let (s, _) = at(&conn, "/pointer").await;
    let doc = s.last_observation().unwrap();
    let labels: Vec<_> = doc.clickables.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, vec!["Card"]);
}

#[tokio::test(start_paused = true)]
async fn static_page_reports_no_requests() {
    let conn = connector();
    let (s, _) = at(&conn, "/static").await;
    assert_eq!(s.ledger().active_count(), 0);
    assert_eq!(s.ledger().last_transition(), None);
}

#[tokio::test(start_paused = true)]
async fn live_observation_equals_offline_compile_of_exported_snapshot() {
    let conn = connector();
    for path in ["/login", "/spa", "/select", "/menu", "/long"] {
        let (s, _) = at(&conn, path).await;
        let offline = compile_observation(s.last_snapshot().unwrap()).unwrap();
        assert_eq!(&offline, s.last_observation().unwrap(), "{path}");
    }
}

#[tokio::test(start_paused = true)]
async fn load_more_waits_for_the_request() {
    let conn = connector();
    for _ in 0..10 {
        let (mut s, _) = at(&conn, "/spa").await;
        let before = s.last_observation().unwrap().clone();
        assert!(!before.html.contains("Item 5"));
        let out = s.execute(&click("load-more")).await;
        assert_eq!(out.status, StepStatus::Ok, "{out:?}");
        let doc = out.observation.unwrap();
        for i in 1..=5 {
            assert!(doc.html.contains(&format!("Item {i}")), "missing item {i}");
        }
        // 300 ms request plus the 500 ms idle window.
        assert!(out.timing.quiescence_ms >= 800.0, "{:?}", out.timing);
    }
}

#[tokio::test(start_paused = true)]
async fn held_request_times_out_with_observation() {
    let conn = connector();
    let cfg = SessionConfig { long_request_threshold: None, ..Default::default() };
    let mut s = BrowserSession::open(cfg, &conn).await.unwrap();
    let out = s.goto(&format!("{BASE}/slow")).await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::Timeout));
    let doc = out.observation.expect("partial observation attached");
    assert!(doc.html.contains("Waiting for updates"));
    assert!(out.error_detail.unwrap().contains("req-"));
    assert!(out.timing.quiescence_ms >= 30_000.0);
}

#[tokio::test(start_paused = true)]
async fn long_request_threshold_lets_streams_settle() {
    let conn = connector();
    let cfg = SessionConfig {
        timeout: Duration::from_secs(30),
        long_request_threshold: Some(Duration::from_secs(10)),
        ..Default::default()
    };
    let mut s = BrowserSession::open(cfg, &conn).await.unwrap();
    let out = s.goto(&format!("{BASE}/slow")).await;
    // Excluded after 10 s, idle 500 ms later.
    assert!(out.is_ok());
    assert!(out.timing.quiescence_ms >= 10_500.0 && out.timing.quiescence_ms < 11_000.0, "{:?}", out.timing);
}

#[tokio::test(start_paused = true)]
async fn vanished_target_is_stale_after_retries() {
    let conn = connector();
    let (mut s, h) = at(&conn, "/spa").await;
    h.remove_element("more");
    let before = h.scroll_calls();
    let out = s.execute(&click("load-more")).await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::StaleElement));
    assert_eq!(h.scroll_calls() - before, 3, "one attempt plus two retries");
    assert!(out.observation.is_some());
}

#[tokio::test(start_paused = true)]
async fn targets_are_scrolled_into_view() {
    let conn = connector();
    let (mut s, h) = at(&conn, "/long").await;
    let viewport = BoxRect::new(0.0, 0.0, 1280.0, 720.0);
    let out = s.execute(&click("bottom-action")).await;
    assert!(out.is_ok(), "{out:?}");
    assert!(out.target_box.unwrap().intersects(&viewport));
    let clicks: Vec<_> = h.interactions().into_iter().filter(|i| i.kind == "click").collect();
    assert_eq!(clicks.len(), 1);
    assert_eq!(clicks[0].target_id.as_deref(), Some("bottom-action"));
    assert!(clicks[0].target_box.unwrap().intersects(&viewport));
    assert!(out.observation.unwrap().html.contains("Bottom clicked"));
}

#[tokio::test(start_paused = true)]
async fn forms_type_clear_and_submit() {
    let conn = connector();
    let (mut s, _) = at(&conn, "/search").await;
    let out =
        s.execute(&ActionRequest::TypeText { target: id("search"), text: "mugs".into(), press_enter: false }).await;
    let doc = out.observation.unwrap();
    let input = doc.input("search").unwrap();
    assert_eq!(input.current_value, "mugs");
    assert!(input.focused);
    let out = s.execute(&ActionRequest::ClearInput { target: id("search") }).await;
    assert_eq!(out.observation.unwrap().input("search").unwrap().current_value, "");
    let out =
        s.execute(&ActionRequest::TypeText { target: id("search"), text: "red mug".into(), press_enter: true }).await;
    assert!(out.is_ok());
    let doc = out.observation.unwrap();
    assert!(doc.html.contains("Results for red mug"), "{}", doc.html);
    assert!(doc.url.contains("/results?q=red+mug"));
}

#[tokio::test(start_paused = true)]
async fn select_option_updates_state() {
    let conn = connector();
    let (mut s, _) = at(&conn, "/select").await;
    assert_eq!(s.last_observation().unwrap().select("color").unwrap().selected_index, 1);
    let out = s.execute(&ActionRequest::SelectOption { target: id("color"), option_id: id("color-green") }).await;
    assert!(out.is_ok());
    let sel = out.observation.unwrap().select("color").unwrap().clone();
    assert_eq!(sel.selected_index, 2);
    assert_eq!(sel.current_value, "green");
}

#[tokio::test(start_paused = true)]
async fn history_and_refresh() {
    let conn = connector();
    let (mut s, _) = at(&conn, "/").await;
    s.execute(&click("catalog")).await;
    assert!(s.last_observation().unwrap().url.ends_with("/spa"));
    let out = s.execute(&ActionRequest::Back).await;
    assert!(out.observation.unwrap().url.ends_with('/'));
    let out = s.execute(&ActionRequest::Forward).await;
    assert!(out.observation.unwrap().url.ends_with("/spa"));
    let out = s.execute(&ActionRequest::Refresh).await;
    assert!(out.is_ok());
    let out = s.goto(&format!("{BASE}/nowhere")).await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::NavigationFailed));
    assert!(out.observation.unwrap().url.ends_with("/spa"));
}

#[tokio::test(start_paused = true)]
async fn tab_management() {
    let conn = connector();
    let (mut s, _) = at(&conn, "/tabs").await;
    let out = s.execute(&click("open-details")).await;
    assert!(out.is_ok());
    assert_eq!(s.tab_count(), 2);
    assert_eq!(s.active_tab(), 1, "a page-opened tab takes focus");
    assert!(out.observation.unwrap().url.ends_with("/static"));

    let out = s.execute(&ActionRequest::NewTab { url: Some(format!("{BASE}/spa")) }).await;
    assert!(out.is_ok());
    assert_eq!((s.tab_count(), s.active_tab()), (3, 2));
    let out = s.execute(&ActionRequest::SwitchTab { index: 0 }).await;
    assert!(out.observation.unwrap().url.ends_with("/tabs"));
    let out = s.execute(&ActionRequest::SwitchTab { index: 7 }).await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::TabIndexOutOfRange));
    let out = s.execute(&ActionRequest::CloseTab { index: 0 }).await;
    assert!(out.is_ok());
    assert_eq!((s.tab_count(), s.active_tab()), (2, 0));
    assert!(out.observation.unwrap().url.ends_with("/static"));
}

#[tokio::test(start_paused = true)]
async fn close_and_terminate() {
    let conn = connector();
    let (mut s, h) = at(&conn, "/static").await;
    s.close().await.unwrap();
    assert!(h.is_shut_down());
    s.close().await.unwrap();
    let out = s.execute(&click("anything")).await;
    assert_eq!(out.status, StepStatus::Error(StepErrorCode::SessionClosed));

    let (mut s, h) = at(&conn, "/static").await;
    let out = s.execute(&ActionRequest::Terminate { answer: Some("42".into()) }).await;
    assert!(out.is_ok());
    assert_eq!(out.answer.as_deref(), Some("42"));
    assert_eq!(s.answer(), Some("42"));
    assert!(s.is_closed() && h.is_shut_down());
}

#[tokio::test(start_paused = true)]
async fn login_fixture_counts() {
    let conn = connector();
    let (s, _) = at(&conn, "/login").await;
    let doc = s.last_observation().unwrap();
    // Inputs are native controls, so they are clickable too.
    assert_eq!(doc.clickables.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), vec!["username", "password", "login"]);
    assert_eq!(doc.inputs.len(), 2);
    assert!(!doc.html.contains("Invalid credentials"));
}
