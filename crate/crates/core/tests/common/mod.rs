//! Generators and reference oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use proptest::prelude::*;
use webenv_core::action::NAMED_KEYS;
use webenv_core::obs::{StrippedChild, StrippedNode, KEEP_EMPTY_TAGS};
use webenv_core::{ActionRequest, NetworkEvent, QuiescenceParams, QuiescenceVerdict, SemanticId};

/// A request on the integer-millisecond grid. `end: None` never finishes.
#[derive(Debug, Clone)]
pub struct Request {
    pub id: String,
    pub start: i64,
    pub end: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct TraceCase {
    pub requests: Vec<Request>,
    /// Same events in arbitrary order.
    pub events: Vec<NetworkEvent>,
    pub action: i64,
    pub window: i64,
    pub timeout: i64,
    pub threshold: Option<i64>,
}

impl TraceCase {
    pub fn params(&self) -> QuiescenceParams {
        QuiescenceParams {
            idle_window: self.window as f64,
            timeout: self.timeout as f64,
            long_request_threshold: self.threshold.map(|t| t as f64).unwrap_or(f64::INFINITY),
        }
    }
}

fn request_strategy() -> impl Strategy<Value = (i64, Option<i64>)> {
    (0i64..1200, prop::option::weighted(0.85, 0i64..900))
}

pub fn trace_case() -> impl Strategy<Value = TraceCase> {
    (prop::collection::vec(request_strategy(), 0..8), 0i64..400, 0i64..300, 0i64..2500, prop::option::of(50i64..1500))
        .prop_flat_map(|(reqs, action, window, timeout, threshold)| {
            let requests: Vec<Request> = reqs
                .into_iter()
                .enumerate()
                .map(|(i, (start, len))| Request { id: format!("r{i}"), start, end: len.map(|l| start + l) })
                .collect();
            let events: Vec<NetworkEvent> = requests
                .iter()
                .flat_map(|r| {
                    let mut ev = vec![NetworkEvent::start(r.id.clone(), r.start as f64)];
                    ev.extend(r.end.map(|e| NetworkEvent::end(r.id.clone(), e as f64)));
                    ev
                })
                .collect();
            Just(events).prop_shuffle().prop_map(move |events| TraceCase {
                requests: requests.clone(),
                events,
                action,
                window,
                timeout,
                threshold,
            })
        })
}

/// Requests that count as activity at instant `t`.
fn countable_at(c: &TraceCase, t: i64) -> impl Iterator<Item = &str> {
    c.requests
        .iter()
        .filter(move |r| r.start <= t && r.end.is_none_or(|e| t < e) && c.threshold.is_none_or(|th| t < r.start + th))
        .map(|r| r.id.as_str())
}

/// Scans every millisecond from the action to the deadline for the first
/// instant preceded by a full quiet window.
pub fn grid_first_idle(c: &TraceCase) -> QuiescenceVerdict {
    let deadline = c.action + c.timeout;
    let mut last_busy: Option<i64> = None;
    for t in c.action..=deadline {
        if countable_at(c, t).next().is_some() {
            last_busy = Some(t);
        }
        let quiet = last_busy.is_none_or(|b| b < t - c.window);
        if t >= c.action + c.window && quiet {
            return QuiescenceVerdict::Idle { at: t as f64 };
        }
    }
    let mut outstanding: Vec<String> = (deadline - c.window..=deadline)
        .flat_map(|t| countable_at(c, t).map(String::from).collect::<Vec<_>>())
        .collect();
    outstanding.sort();
    outstanding.dedup();
    QuiescenceVerdict::TimedOut { outstanding }
}

const TREE_TAGS: &[&str] =
    &["div", "span", "div", "span", "p", "a", "button", "input", "ul", "li", "b", "img", "section", "head"];

fn element() -> impl Strategy<Value = StrippedNode> {
    (prop::sample::select(TREE_TAGS), prop::bool::weighted(0.15), prop::bool::weighted(0.15), prop::bool::weighted(0.1))
        .prop_map(|(tag, has_attr, clickable, has_id)| {
            let mut n = StrippedNode::new(tag);
            if has_attr {
                n.retained_attributes.insert("aria-label".into(), "x".into());
            }
            n.data_clickable = clickable;
            if has_id {
                n.semantic_id = Some(SemanticId::new(format!("{tag}-id")).unwrap());
            }
            n
        })
}

fn child() -> impl Strategy<Value = StrippedChild> {
    let leaf = prop_oneof![
        1 => "[a-z]{1,6}".prop_map(StrippedChild::Text),
        3 => element().prop_map(StrippedChild::Element),
    ];
    leaf.prop_recursive(6, 64, 5, |inner| {
        (element(), prop::collection::vec(inner, 0..5)).prop_map(|(mut n, kids)| {
            n.children = kids;
            StrippedChild::Element(n)
        })
    })
}

pub fn tree() -> impl Strategy<Value = StrippedNode> {
    (element(), prop::collection::vec(child(), 0..5)).prop_map(|(mut root, kids)| {
        root.children = kids;
        root
    })
}

fn collapsible(n: &StrippedNode) -> bool {
    ["div", "span"].contains(&n.tag.as_str())
        && n.retained_attributes.is_empty()
        && n.semantic_id.is_none()
        && !n.is_interactive()
        && !n.has_text()
        && n.children.len() == 1
}

fn empty_removable(n: &StrippedNode) -> bool {
    n.children.is_empty() && !n.is_interactive() && !KEEP_EMPTY_TAGS.contains(&n.tag.as_str())
}

fn interactive_count(n: &StrippedNode) -> usize {
    let mut k = 0;
    n.walk(&mut |x| k += usize::from(x.is_interactive()));
    k
}

/// Checks a flattened tree against its input.
pub fn flatten_holds(input: &StrippedNode, once: &StrippedNode, twice: &StrippedNode) -> Result<(), String> {
    if once != twice {
        return Err("second pass changed the tree".into());
    }
    if input.visible_text() != once.visible_text() {
        return Err(format!("text changed: {:?} -> {:?}", input.visible_text(), once.visible_text()));
    }
    if interactive_count(input) != interactive_count(once) {
        return Err("interactive elements lost".into());
    }
    let mut bad = None;
    once.walk(&mut |n| {
        if collapsible(n) {
            bad = Some(format!("single-child wrapper <{}> left", n.tag));
        }
        for c in n.element_children() {
            if empty_removable(c) {
                bad = Some(format!("empty <{}> left", c.tag));
            }
        }
    });
    bad.map_or(Ok(()), Err)
}

fn semantic_id() -> impl Strategy<Value = SemanticId> {
    "[a-z0-9-]{1,24}".prop_map(|s| SemanticId::new(s).unwrap())
}

fn key() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(NAMED_KEYS).prop_map(String::from),
        any::<char>().prop_filter("printable", |c| !c.is_control()).prop_map(String::from),
    ]
}

fn url() -> impl Strategy<Value = String> {
    "https?://[a-z]{1,10}(\\.[a-z]{2,5})?(:[1-9][0-9]{1,3})?(/[a-zA-Z0-9_-]{0,8}){0,3}(\\?q=[a-z0-9]{1,5})?"
}

pub fn action() -> impl Strategy<Value = ActionRequest> {
    prop_oneof![
        semantic_id().prop_map(|target| ActionRequest::ClickElement { target }),
        semantic_id().prop_map(|target| ActionRequest::HoverElement { target }),
        (key(), prop::option::of(semantic_id())).prop_map(|(key, target)| ActionRequest::KeyPress { key, target }),
        (semantic_id(), any::<String>(), any::<bool>())
            .prop_map(|(target, text, press_enter)| ActionRequest::TypeText { target, text, press_enter }),
        semantic_id().prop_map(|target| ActionRequest::ClearInput { target }),
        (semantic_id(), semantic_id())
            .prop_map(|(target, option_id)| ActionRequest::SelectOption { target, option_id }),
        url().prop_map(|url| ActionRequest::Navigate { url }),
        Just(ActionRequest::Back),
        Just(ActionRequest::Forward),
        Just(ActionRequest::Refresh),
        prop::option::of(url()).prop_map(|url| ActionRequest::NewTab { url }),
        (0usize..64).prop_map(|index| ActionRequest::SwitchTab { index }),
        (0usize..64).prop_map(|index| ActionRequest::CloseTab { index }),
        prop::option::of(any::<String>()).prop_map(|answer| ActionRequest::Terminate { answer }),
    ]
}
