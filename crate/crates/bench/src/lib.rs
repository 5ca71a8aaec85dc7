//! Workloads shared by the benchmarks.

use webenv_core::NetworkEvent;

/// `n` overlapping requests, each 40 ms long and started 25 ms apart, with
/// one long-lived stream that never ends.
pub fn staggered_trace(n: usize) -> Vec<NetworkEvent> {
    let mut events = vec![NetworkEvent::start("stream", 0.0)];
    for i in 0..n {
        let t = i as f64 * 25.0;
        events.push(NetworkEvent::start(format!("r{i}"), t));
        events.push(NetworkEvent::end(format!("r{i}"), t + 40.0));
    }
    events
}

/// One request body per action kind.
pub const ACTIONS: &[&str] = &[
    r#"{"action":"click","target":"add-to-cart"}"#,
    r#"{"action":"hover","target":"products"}"#,
    r#"{"action":"key","key":"Enter"}"#,
    r#"{"action":"type","target":"search","text":"blue mug","enter":true}"#,
    r#"{"action":"clear","target":"search"}"#,
    r#"{"action":"select","target":"color","option":"color-blue"}"#,
    r#"{"action":"navigate","url":"http://127.0.0.1:8080/cart"}"#,
    r#"{"action":"back"}"#,
    r#"{"action":"new_tab","url":"http://127.0.0.1:8080/"}"#,
    r#"{"action":"switch_tab","index":0}"#,
    r#"{"action":"terminate","answer":"done"}"#,
];
