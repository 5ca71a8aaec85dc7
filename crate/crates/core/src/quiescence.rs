//! Network quiescence detection.
//!
//! Request start/end events come from the page runtime (wrapped `fetch` and
//! `XMLHttpRequest`). A page is quiescent once no *countable* request has
//! been active for a full idle window. Requests outstanding for longer than
//! the long-request threshold (streams, long polls) stop being counted at
//! that point.
//!
//! Timestamps are milliseconds on the page clock.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_IDLE_WINDOW: Duration = Duration::from_millis(500);
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_LONG_REQUEST_THRESHOLD: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    End,
}

/// One line of the event trace format: `{"kind":"start","id":"r1","t":0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvent {
    pub kind: EventKind,
    pub id: String,
    pub t: f64,
}

impl NetworkEvent {
    pub fn start(id: impl Into<String>, t: f64) -> Self {
        NetworkEvent { kind: EventKind::Start, id: id.into(), t }
    }

    pub fn end(id: impl Into<String>, t: f64) -> Self {
        NetworkEvent { kind: EventKind::End, id: id.into(), t }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuiescenceError {
    #[error("request {0:?} is already active")]
    DuplicateRequestId(String),
    #[error("trace line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
}

/// Window, timeout, and long-request threshold, all in milliseconds. The
/// threshold may be `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuiescenceParams {
    pub idle_window: f64,
    pub timeout: f64,
    pub long_request_threshold: f64,
}

impl Default for QuiescenceParams {
    fn default() -> Self {
        QuiescenceParams::from_durations(DEFAULT_IDLE_WINDOW, DEFAULT_TIMEOUT, Some(DEFAULT_LONG_REQUEST_THRESHOLD))
    }
}

impl QuiescenceParams {
    pub fn from_durations(idle_window: Duration, timeout: Duration, long_request_threshold: Option<Duration>) -> Self {
        QuiescenceParams {
            idle_window: idle_window.as_secs_f64() * 1000.0,
            timeout: timeout.as_secs_f64() * 1000.0,
            long_request_threshold: long_request_threshold.map(|d| d.as_secs_f64() * 1000.0).unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum QuiescenceVerdict {
    Idle { at: f64 },
    TimedOut { outstanding: Vec<String> },
}

impl QuiescenceVerdict {
    pub fn is_idle(&self) -> bool {
        matches!(self, QuiescenceVerdict::Idle { .. })
    }
}

/// Live request bookkeeping for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkActivityLedger {
    active: BTreeMap<String, f64>,
    last_transition: f64,
    pub params: QuiescenceParams,
}

impl NetworkActivityLedger {
    pub fn new(params: QuiescenceParams) -> Self {
        NetworkActivityLedger { active: BTreeMap::new(), last_transition: f64::NEG_INFINITY, params }
    }

    pub fn on_request_start(&mut self, id: &str, t: f64) -> Result<(), QuiescenceError> {
        if self.active.contains_key(id) {
            return Err(QuiescenceError::DuplicateRequestId(id.to_string()));
        }
        self.active.insert(id.to_string(), t);
        self.touch(t);
        Ok(())
    }

    /// Ends a request. Unknown ids are tolerated: instrumentation may attach
    /// while a request is already in flight.
    pub fn on_request_end(&mut self, id: &str, t: f64) {
        self.active.remove(id);
        self.touch(t);
    }

    fn touch(&mut self, t: f64) {
        if t > self.last_transition {
            self.last_transition = t;
        }
    }

    pub fn apply(&mut self, event: &NetworkEvent) -> Result<(), QuiescenceError> {
        match event.kind {
            EventKind::Start => self.on_request_start(&event.id, event.t),
            EventKind::End => {
                self.on_request_end(&event.id, event.t);
                Ok(())
            }
        }
    }

    pub fn active(&self) -> impl Iterator<Item = (&str, f64)> {
        self.active.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Ids still counted at `now` (not yet past the long-request threshold).
    pub fn countable_at(&self, now: f64) -> Vec<&str> {
        self.active
            .iter()
            .filter(|(_, s)| now - **s < self.params.long_request_threshold)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn last_transition(&self) -> Option<f64> {
        self.last_transition.is_finite().then_some(self.last_transition)
    }

    /// A navigation replaces the whole request population.
    pub fn reset(&mut self) {
        self.active.clear();
    }
}

/// Half-open interval during which a request counts as activity.
#[derive(Debug, Clone, PartialEq)]
struct Busy {
    id: String,
    from: f64,
    to: f64,
}

fn busy_intervals(events: &[NetworkEvent], threshold: f64) -> Vec<Busy> {
    // Within one timestamp, starts go before ends so that reordering
    // simultaneous events cannot change the pairing.
    let mut ordered: Vec<&NetworkEvent> = events.iter().collect();
    ordered
        .sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| (a.kind == EventKind::End).cmp(&(b.kind == EventKind::End))));
    let mut open: BTreeMap<&str, f64> = BTreeMap::new();
    let mut raw: Vec<(String, f64, f64)> = Vec::new();
    for e in ordered {
        match e.kind {
            EventKind::Start => {
                open.entry(e.id.as_str()).or_insert(e.t);
            }
            EventKind::End => {
                if let Some(s) = open.remove(e.id.as_str()) {
                    raw.push((e.id.clone(), s, e.t));
                }
            }
        }
    }
    raw.extend(open.into_iter().map(|(id, s)| (id.to_string(), s, f64::INFINITY)));
    let mut out: Vec<Busy> = raw
        .into_iter()
        .map(|(id, from, end)| Busy { id, from, to: end.min(from + threshold) })
        .filter(|b| b.to > b.from)
        .collect();
    out.sort_by(|a, b| a.from.total_cmp(&b.from).then_with(|| a.id.cmp(&b.id)));
    out
}

/// Earliest instant `τ ≥ action_time + idle_window` such that no countable
/// request is active anywhere in `[τ - idle_window, τ]`, or `TimedOut` when
/// no such instant exists by `action_time + timeout`.
pub fn first_idle_instant(events: &[NetworkEvent], action_time: f64, params: &QuiescenceParams) -> QuiescenceVerdict {
    let window = params.idle_window;
    let deadline = action_time + params.timeout;
    let busy = busy_intervals(events, params.long_request_threshold);

    // `gap_start` is the earliest admissible start of a quiet window.
    let mut gap_start = action_time;
    for b in &busy {
        if b.to <= gap_start {
            continue;
        }
        if gap_start + window < b.from {
            break;
        }
        gap_start = gap_start.max(b.to);
        if gap_start + window > deadline {
            break;
        }
    }
    let at = gap_start + window;
    if at <= deadline {
        return QuiescenceVerdict::Idle { at };
    }
    let from = deadline - window;
    let mut outstanding: Vec<String> =
        busy.iter().filter(|b| b.from <= deadline && b.to > from).map(|b| b.id.clone()).collect();
    outstanding.sort();
    outstanding.dedup();
    QuiescenceVerdict::TimedOut { outstanding }
}

/// Parses a JSON-lines event trace. Blank lines are skipped.
pub fn read_trace(text: &str) -> Result<Vec<NetworkEvent>, QuiescenceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<NetworkEvent>(l)
                .map_err(|e| QuiescenceError::BadTrace { line: i + 1, reason: e.to_string() })
                .and_then(|ev| {
                    if ev.t.is_finite() {
                        Ok(ev)
                    } else {
                        Err(QuiescenceError::BadTrace { line: i + 1, reason: "non-finite timestamp".into() })
                    }
                })
        })
        .collect()
}

pub fn write_trace(events: &[NetworkEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(window: f64, timeout: f64, threshold: f64) -> QuiescenceParams {
        QuiescenceParams { idle_window: window, timeout, long_request_threshold: threshold }
    }

    #[test]
    fn ledger_start_end() {
        let mut l = NetworkActivityLedger::new(QuiescenceParams::default());
        l.on_request_start("r1", 0.0).unwrap();
        assert_eq!(l.active().map(|(k, _)| k).collect::<Vec<_>>(), vec!["r1"]);
        assert_eq!(l.on_request_start("r1", 1.0), Err(QuiescenceError::DuplicateRequestId("r1".into())));
        l.on_request_start("r2", 200.0).unwrap();
        assert_eq!(l.active_count(), 2);
        l.on_request_end("r1", 1000.0);
        assert_eq!(l.active().map(|(k, _)| k).collect::<Vec<_>>(), vec!["r2"]);
        l.on_request_end("r2", 1000.0);
        assert_eq!(l.active_count(), 0);
        assert_eq!(l.last_transition(), Some(1000.0));
    }

    #[test]
    fn end_for_unknown_id_is_a_noop() {
        let mut l = NetworkActivityLedger::new(QuiescenceParams::default());
        l.on_request_end("r9", 1000.0);
        assert_eq!(l.active_count(), 0);
        assert_eq!(l.last_transition(), Some(1000.0));
    }

    #[test]
    fn last_transition_is_monotone() {
        let mut l = NetworkActivityLedger::new(QuiescenceParams::default());
        l.on_request_start("a", 50.0).unwrap();
        l.on_request_end("a", 10.0);
        assert_eq!(l.last_transition(), Some(50.0));
    }

    #[test]
    fn countable_excludes_long_requests() {
        let mut l = NetworkActivityLedger::new(params(500.0, 30_000.0, 10_000.0));
        l.on_request_start("sse", 0.0).unwrap();
        l.on_request_start("x", 9_000.0).unwrap();
        assert_eq!(l.countable_at(9_500.0), vec!["sse", "x"]);
        assert_eq!(l.countable_at(10_000.0), vec!["x"]);
    }

    #[test]
    fn worked_examples() {
        let p = params(500.0, 30_000.0, 10_000.0);
        assert_eq!(first_idle_instant(&[], 0.0, &p), QuiescenceVerdict::Idle { at: 500.0 });
        let ev = [NetworkEvent::start("r1", 0.0), NetworkEvent::end("r1", 1000.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 1500.0 });
        let ev = [NetworkEvent::start("r1", 0.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 10_500.0 });
    }

    #[test]
    fn never_ending_request_times_out_without_threshold() {
        let p = params(500.0, 30_000.0, f64::INFINITY);
        let ev = [NetworkEvent::start("r1", 0.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::TimedOut { outstanding: vec!["r1".into()] });
    }

    #[test]
    fn a_gap_shorter_than_the_window_does_not_count() {
        let p = params(500.0, 30_000.0, f64::INFINITY);
        let ev = [
            NetworkEvent::start("a", 0.0),
            NetworkEvent::end("a", 100.0),
            NetworkEvent::start("b", 400.0),
            NetworkEvent::end("b", 700.0),
        ];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 1200.0 });
        // Exactly touching the window end still counts as busy.
        let ev = [NetworkEvent::start("a", 500.0), NetworkEvent::end("a", 600.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 1100.0 });
        let ev = [NetworkEvent::start("a", 501.0), NetworkEvent::end("a", 600.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 500.0 });
    }

    #[test]
    fn requests_before_the_action_still_block() {
        let p = params(500.0, 30_000.0, f64::INFINITY);
        let ev = [NetworkEvent::start("a", -300.0), NetworkEvent::end("a", 200.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 700.0 });
        let ev = [NetworkEvent::start("a", -900.0), NetworkEvent::end("a", -800.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 500.0 });
    }

    #[test]
    fn unmatched_and_duplicate_events() {
        let p = params(500.0, 30_000.0, f64::INFINITY);
        let ev = [NetworkEvent::end("ghost", 100.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 500.0 });
        let ev = [NetworkEvent::start("a", 0.0), NetworkEvent::start("a", 50.0), NetworkEvent::end("a", 100.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 600.0 });
    }

    #[test]
    fn simultaneous_events_pair_regardless_of_order() {
        let p = params(500.0, 30_000.0, f64::INFINITY);
        let a = [NetworkEvent::end("a", 100.0), NetworkEvent::start("a", 100.0)];
        let b = [NetworkEvent::start("a", 100.0), NetworkEvent::end("a", 100.0)];
        assert_eq!(first_idle_instant(&a, 0.0, &p), first_idle_instant(&b, 0.0, &p));
    }

    #[test]
    fn timeout_is_inclusive() {
        let p = params(500.0, 1500.0, f64::INFINITY);
        let ev = [NetworkEvent::start("a", 0.0), NetworkEvent::end("a", 1000.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::Idle { at: 1500.0 });
        let ev = [NetworkEvent::start("a", 0.0), NetworkEvent::end("a", 1001.0)];
        assert_eq!(first_idle_instant(&ev, 0.0, &p), QuiescenceVerdict::TimedOut { outstanding: vec!["a".into()] });
    }

    #[test]
    fn trace_roundtrip_and_errors() {
        let ev = vec![NetworkEvent::start("r1", 0.0), NetworkEvent::end("r1", 1000.5)];
        let text = write_trace(&ev);
        assert_eq!(
            text,
            "{\"kind\":\"start\",\"id\":\"r1\",\"t\":0.0}\n{\"kind\":\"end\",\"id\":\"r1\",\"t\":1000.5}\n"
        );
        assert_eq!(read_trace(&text).unwrap(), ev);
        assert!(matches!(
            read_trace("{\"kind\":\"begin\",\"id\":\"x\",\"t\":1}"),
            Err(QuiescenceError::BadTrace { line: 1, .. })
        ));
    }
}
