//! In-process browser used by tests and the `--sim-browser` service mode.
//!
//! Pages are trees of [`SimNode`]s carrying scripted behaviour: event
//! handlers produce [`Effect`]s such as timed requests, DOM edits, and
//! navigation. The clock is tokio's, so tests run under paused time. Page
//! instrumentation is modelled faithfully: without it no network events are
//! reported and listener registrations leave no marks.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use indexmap::IndexMap;
use tokio::time::Instant;
use url::Url;

use super::{BrowserBackend, BrowserConnector, DriverError, NetworkPoll, TabId};
use crate::obs::{BoxRect, IdBinding, ListenerFlag, RawDomSnapshot, RawNode, RuntimeState, SemanticId, Size};
use crate::quiescence::NetworkEvent;

const LINE_HEIGHT: f64 = 24.0;
const CONTROL_HEIGHT: f64 = 32.0;
const MARGIN: f64 = 8.0;
const FRAME_MS: u64 = 16;

/// Scripted behaviour triggered by an event handler or page load.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// A background request taking `ms`; `then` runs when it completes.
    Fetch {
        ms: u64,
        then: Vec<Effect>,
    },
    /// A request that ends after `ms`, or never.
    Hold {
        ms: Option<u64>,
    },
    /// A timer with no network activity.
    Delay {
        ms: u64,
        then: Vec<Effect>,
    },
    /// Appends nodes to the element with the given `id` attribute.
    Append {
        parent: String,
        nodes: Vec<SimNode>,
    },
    Remove {
        id: String,
    },
    SetStyle {
        id: String,
        name: String,
        value: String,
    },
    Navigate {
        url: String,
    },
    OpenTab {
        url: String,
    },
    /// Writes `key=value` into the server behind the current page.
    Post {
        key: String,
        value: String,
    },
    Reload,
}

impl Effect {
    pub fn fetch(ms: u64, then: impl IntoIterator<Item = Effect>) -> Effect {
        Effect::Fetch { ms, then: then.into_iter().collect() }
    }

    pub fn append(parent: &str, nodes: impl IntoIterator<Item = SimNode>) -> Effect {
        Effect::Append { parent: parent.into(), nodes: nodes.into_iter().collect() }
    }

    pub fn show(id: &str) -> Effect {
        Effect::SetStyle { id: id.into(), name: "display".into(), value: "block".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Handlers {
    pub click: Vec<Effect>,
    pub hover: Vec<Effect>,
    pub input: Vec<Effect>,
    pub change: Vec<Effect>,
}

/// One node of a simulated page. Text nodes use the tag `#text`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimNode {
    pub tag: String,
    pub attrs: IndexMap<String, String>,
    pub text: Option<String>,
    pub style: BTreeMap<String, String>,
    pub handlers: Handlers,
    pub value: Option<String>,
    pub checked: Option<bool>,
    pub selected: Option<bool>,
    pub selection: Option<(usize, usize)>,
    pub focused: bool,
    pub scrollable: bool,
    pub children: Vec<SimNode>,
    node_ref: u64,
}

pub fn el(tag: &str) -> SimNode {
    SimNode {
        tag: tag.to_ascii_lowercase(),
        attrs: IndexMap::new(),
        text: None,
        style: BTreeMap::new(),
        handlers: Handlers::default(),
        value: None,
        checked: None,
        selected: None,
        selection: None,
        focused: false,
        scrollable: false,
        children: Vec::new(),
        node_ref: 0,
    }
}

pub fn text(t: &str) -> SimNode {
    let mut n = el("#text");
    n.text = Some(t.to_string());
    n
}

impl SimNode {
    pub fn attr(mut self, k: &str, v: &str) -> Self {
        self.attrs.insert(k.into(), v.into());
        self
    }

    pub fn id(self, v: &str) -> Self {
        self.attr("id", v)
    }

    pub fn style(mut self, k: &str, v: &str) -> Self {
        self.style.insert(k.into(), v.into());
        self
    }

    pub fn text(self, t: &str) -> Self {
        self.child(text(t))
    }

    pub fn child(mut self, c: SimNode) -> Self {
        self.children.push(c);
        self
    }

    pub fn children(mut self, cs: impl IntoIterator<Item = SimNode>) -> Self {
        self.children.extend(cs);
        self
    }

    pub fn value(mut self, v: &str) -> Self {
        self.value = Some(v.into());
        self
    }

    pub fn selected(mut self) -> Self {
        self.selected = Some(true);
        self
    }

    pub fn on_click(mut self, e: Effect) -> Self {
        self.handlers.click.push(e);
        self
    }

    pub fn on_hover(mut self, e: Effect) -> Self {
        self.handlers.hover.push(e);
        self
    }

    pub fn on_input(mut self, e: Effect) -> Self {
        self.handlers.input.push(e);
        self
    }

    pub fn on_change(mut self, e: Effect) -> Self {
        self.handlers.change.push(e);
        self
    }

    pub fn node_ref(&self) -> u64 {
        self.node_ref
    }

    fn is_text(&self) -> bool {
        self.tag == "#text"
    }

    fn walk_mut(&mut self, f: &mut impl FnMut(&mut SimNode)) {
        f(self);
        for c in &mut self.children {
            c.walk_mut(f);
        }
    }

    fn walk(&self, f: &mut impl FnMut(&SimNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    fn find_mut(&mut self, pred: &impl Fn(&SimNode) -> bool) -> Option<&mut SimNode> {
        if pred(self) {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(pred))
    }

    fn find(&self, pred: &impl Fn(&SimNode) -> bool) -> Option<&SimNode> {
        if pred(self) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(pred))
    }

    fn remove_where(&mut self, pred: &impl Fn(&SimNode) -> bool) -> bool {
        let before = self.children.len();
        self.children.retain(|c| !pred(c));
        let mut removed = self.children.len() != before;
        for c in &mut self.children {
            removed |= c.remove_where(pred);
        }
        removed
    }

    fn text_content(&self) -> String {
        let mut s = String::new();
        self.walk(&mut |n| {
            if let Some(t) = &n.text {
                s.push_str(t);
            }
        });
        s
    }

    fn live_value(&self) -> String {
        match &self.value {
            Some(v) => v.clone(),
            None if self.tag == "textarea" => self.text_content(),
            None => self.attrs.get("value").cloned().unwrap_or_default(),
        }
    }

    fn is_text_control(&self) -> bool {
        match self.tag.as_str() {
            "textarea" => true,
            "input" => matches!(
                self.attrs.get("type").map(|s| s.as_str()).unwrap_or("text"),
                "text" | "search" | "email" | "password" | "url" | "tel" | "number"
            ),
            _ => false,
        }
    }

    fn is_disabled(&self) -> bool {
        self.attrs.contains_key("disabled") || self.style.get("pointer-events").map(|s| s.as_str()) == Some("none")
    }
}

/// A page as served: title, body content, and effects run on load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimPage {
    pub title: String,
    pub body: Vec<SimNode>,
    pub on_load: Vec<Effect>,
}

impl SimPage {
    pub fn new(title: &str) -> Self {
        SimPage { title: title.into(), body: Vec::new(), on_load: Vec::new() }
    }

    pub fn with(mut self, n: SimNode) -> Self {
        self.body.push(n);
        self
    }

    pub fn on_load(mut self, e: Effect) -> Self {
        self.on_load.push(e);
        self
    }

    fn into_root(self) -> SimNode {
        let mut head = el("head");
        if !self.title.is_empty() {
            head = head.child(el("title").text(&self.title));
        }
        el("html").child(head).child(el("body").children(self.body))
    }
}

/// The server side of simulated pages.
pub trait SimSite: Send + Sync {
    /// The page served at `url`; `None` when nothing answers there.
    fn load(&self, url: &Url) -> Option<SimPage>;
    /// Applies a write to the server behind `url`.
    fn post(&self, url: &Url, key: &str, value: &str) -> bool;
}

type PageFn = dyn Fn(&Url) -> SimPage + Send + Sync;

/// Static routing table keyed by path, answering on any host.
#[derive(Default, Clone)]
pub struct RouteSite {
    routes: Vec<(String, Arc<PageFn>)>,
    posts: Arc<Mutex<Vec<(String, String)>>>,
}

impl RouteSite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, path: &str, f: impl Fn(&Url) -> SimPage + Send + Sync + 'static) -> Self {
        self.routes.push((path.to_string(), Arc::new(f)));
        self
    }

    pub fn page(self, path: &str, page: SimPage) -> Self {
        self.route(path, move |_| page.clone())
    }

    pub fn posts(&self) -> Vec<(String, String)> {
        self.posts.lock().unwrap().clone()
    }
}

impl SimSite for RouteSite {
    fn load(&self, url: &Url) -> Option<SimPage> {
        self.routes.iter().find(|(p, _)| p == url.path()).map(|(_, f)| f(url))
    }

    fn post(&self, _url: &Url, key: &str, value: &str) -> bool {
        self.posts.lock().unwrap().push((key.into(), value.into()));
        true
    }
}

struct Pending {
    due: f64,
    seq: u64,
    request: Option<String>,
    effects: Vec<Effect>,
}

struct SimDoc {
    url: String,
    id: String,
    root: SimNode,
    pending: Vec<Pending>,
    scroll_y: f64,
    hovered: Option<u64>,
}

struct SimTab {
    id: TabId,
    doc: SimDoc,
    history: Vec<String>,
    history_index: usize,
    instrumented: bool,
    events: Vec<NetworkEvent>,
    viewport: Size,
}

/// A recorded pointer interaction, for assertions in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub kind: &'static str,
    pub x: f64,
    pub y: f64,
    /// Box of the element under the pointer, in viewport coordinates.
    pub target_box: Option<BoxRect>,
    pub target_id: Option<String>,
}

struct SimState {
    site: Arc<dyn SimSite>,
    epoch: Instant,
    tabs: Vec<SimTab>,
    next_tab: u64,
    next_doc: u64,
    next_ref: u64,
    next_request: u64,
    next_seq: u64,
    interactions: Vec<Interaction>,
    scroll_calls: usize,
    shut_down: bool,
}

fn blank_root() -> SimNode {
    el("html").child(el("head")).child(el("body"))
}

fn base_style(n: &SimNode, hidden_flow: bool) -> BTreeMap<String, String> {
    let mut s = BTreeMap::new();
    let display = if matches!(n.tag.as_str(), "head" | "script" | "style" | "meta" | "link" | "title") || hidden_flow {
        "none"
    } else if matches!(n.tag.as_str(), "span" | "a" | "b" | "i" | "em" | "strong" | "label") {
        "inline"
    } else {
        "block"
    };
    s.insert("display".into(), display.into());
    s.insert("visibility".into(), "visible".into());
    s.insert("opacity".into(), "1".into());
    let pointer = (n.tag == "a" && n.attrs.contains_key("href")) || matches!(n.tag.as_str(), "button" | "summary");
    s.insert("cursor".into(), if pointer { "pointer" } else { "auto" }.into());
    s.insert("pointer-events".into(), "auto".into());
    for (k, v) in &n.style {
        s.insert(k.clone(), v.clone());
    }
    s
}

/// Vertical flow layout: every element is a full-width block, text lines and
/// controls take fixed heights.
fn layout(n: &SimNode, y: f64, width: f64, hidden: bool, in_select: bool, out: &mut HashMap<u64, BoxRect>) -> f64 {
    if n.is_text() {
        return 0.0;
    }
    let style = base_style(n, false);
    let hidden = hidden || style.get("display").map(|s| s.as_str()) == Some("none") || in_select;
    if hidden {
        out.insert(n.node_ref, BoxRect::new(MARGIN, y, 0.0, 0.0));
        for c in &n.children {
            layout(c, y, width, true, in_select, out);
        }
        return 0.0;
    }
    let mut h = 0.0;
    let has_text = n.children.iter().any(|c| c.is_text() && c.text.as_deref().is_some_and(|t| !t.trim().is_empty()));
    if matches!(n.tag.as_str(), "input" | "select" | "textarea" | "button" | "img") {
        h += CONTROL_HEIGHT;
    } else if has_text {
        h += LINE_HEIGHT;
    }
    let child_in_select = n.tag == "select";
    for c in &n.children {
        h += layout(c, y + h, width, false, child_in_select, out);
    }
    if let Some(px) = n.style.get("height").and_then(|v| v.trim_end_matches("px").parse::<f64>().ok()) {
        h = px;
    }
    out.insert(n.node_ref, BoxRect::new(MARGIN, y, width, h));
    h
}

impl SimTab {
    fn layout(&self) -> (HashMap<u64, BoxRect>, f64) {
        let mut boxes = HashMap::new();
        let h = layout(&self.doc.root, 0.0, self.viewport.width - 2.0 * MARGIN, false, false, &mut boxes);
        (boxes, h)
    }

    fn find_semantic(&self, id: &str) -> Option<&SimNode> {
        self.doc.root.find(&|n| n.attrs.get("data-semantic-id").map(|s| s.as_str()) == Some(id))
    }

    fn to_raw(&self, n: &SimNode, boxes: &HashMap<u64, BoxRect>) -> RawNode {
        if n.is_text() {
            return RawNode::text_node(n.text.as_deref().unwrap_or(""));
        }
        let mut r = RawNode::element(&n.tag);
        r.attributes = n.attrs.clone();
        r.computed_style = base_style(n, false);
        r.bbox = boxes.get(&n.node_ref).copied();
        r.scrollable = n.scrollable;
        r.node_ref = Some(n.node_ref);
        if self.instrumented {
            if !n.handlers.click.is_empty() {
                r.listener_flags.insert(ListenerFlag::ClickListener);
            }
            if !n.handlers.hover.is_empty() {
                r.attributes.insert("data-maybe-hoverable".into(), "true".into());
            }
        }
        let mut st = RuntimeState { focused: n.focused, ..Default::default() };
        match n.tag.as_str() {
            "input" | "textarea" => {
                st.value = Some(n.live_value());
                st.checked = n.checked;
                if let Some((s, e)) = n.selection {
                    st.selection_start = Some(s);
                    st.selection_end = Some(e);
                }
            }
            "select" => {
                st.multiple = Some(n.attrs.contains_key("multiple"));
            }
            "option" => {
                st.selected = Some(n.selected.unwrap_or_else(|| n.attrs.contains_key("selected")));
            }
            _ => {}
        }
        if st != RuntimeState::default() {
            r.state = Some(st);
        }
        r.children = n.children.iter().map(|c| self.to_raw(c, boxes)).collect();
        r
    }

    /// Deepest visible element containing the document point.
    fn hit(&self, x: f64, y: f64) -> Option<u64> {
        let (boxes, _) = self.layout();
        fn go(n: &SimNode, x: f64, y: f64, boxes: &HashMap<u64, BoxRect>) -> Option<u64> {
            if n.is_text() {
                return None;
            }
            let b = boxes.get(&n.node_ref)?;
            if b.width <= 0.0 || b.height <= 0.0 || !b.contains(x, y) {
                return None;
            }
            n.children.iter().rev().find_map(|c| go(c, x, y, boxes)).or(Some(n.node_ref))
        }
        go(&self.doc.root, x, y, &boxes)
    }

    /// Node refs from the root down to `target`.
    fn path_to(&self, target: u64) -> Vec<u64> {
        fn go(n: &SimNode, target: u64, path: &mut Vec<u64>) -> bool {
            path.push(n.node_ref);
            if n.node_ref == target || n.children.iter().any(|c| go(c, target, path)) {
                return true;
            }
            path.pop();
            false
        }
        let mut path = Vec::new();
        go(&self.doc.root, target, &mut path);
        path
    }

    fn node(&self, r: u64) -> Option<&SimNode> {
        self.doc.root.find(&|n| n.node_ref == r)
    }

    fn node_mut(&mut self, r: u64) -> Option<&mut SimNode> {
        self.doc.root.find_mut(&|n| n.node_ref == r)
    }

    fn focused(&self) -> Option<u64> {
        self.doc.root.find(&|n| n.focused).map(|n| n.node_ref)
    }
}

/// Work left over after handling an event, applied by the state machine.
enum Followup {
    Effects(Vec<Effect>),
    Navigate(String),
    OpenTab(String),
    Submit(u64),
}

impl SimState {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }

    fn tab_index(&self, id: &TabId) -> Result<usize, DriverError> {
        self.tabs.iter().position(|t| &t.id == id).ok_or_else(|| DriverError::Protocol(format!("no tab {id}")))
    }

    fn assign_refs(&mut self, n: &mut SimNode) {
        let mut next = self.next_ref;
        n.walk_mut(&mut |m| {
            next += 1;
            m.node_ref = next;
        });
        self.next_ref = next;
    }

    fn new_doc(&mut self, url: &str, root: SimNode) -> SimDoc {
        let mut root = root;
        self.assign_refs(&mut root);
        self.next_doc += 1;
        SimDoc {
            url: url.into(),
            id: format!("doc-{}", self.next_doc),
            root,
            pending: Vec::new(),
            scroll_y: 0.0,
            hovered: None,
        }
    }

    fn resolve_url(&self, tab: usize, url: &str) -> Result<Url, DriverError> {
        let base = Url::parse(&self.tabs[tab].doc.url).ok();
        Url::options()
            .base_url(base.as_ref())
            .parse(url)
            .map_err(|e| DriverError::NavigationFailed(format!("{url}: {e}")))
    }

    /// Loads `url` into the tab. `push` adds a history entry.
    fn load(&mut self, tab: usize, url: &str, push: bool) -> Result<(), DriverError> {
        let (root, on_load, url) = if url == "about:blank" {
            (blank_root(), Vec::new(), url.to_string())
        } else {
            let parsed = self.resolve_url(tab, url)?;
            let page = self
                .site
                .load(&parsed)
                .ok_or_else(|| DriverError::NavigationFailed(format!("no server answered at {parsed}")))?;
            let on_load = page.on_load.clone();
            (page.into_root(), on_load, parsed.to_string())
        };
        let doc = self.new_doc(&url, root);
        let t = &mut self.tabs[tab];
        t.doc = doc;
        t.events.clear();
        if push {
            t.history.truncate(t.history_index + 1);
            t.history.push(url);
            t.history_index = t.history.len() - 1;
        }
        let now = self.now();
        self.run_effects(tab, on_load, now);
        Ok(())
    }

    fn open_tab(&mut self, viewport: Size) -> TabId {
        self.next_tab += 1;
        let id = format!("tab-{}", self.next_tab);
        let doc = self.new_doc("about:blank", blank_root());
        self.tabs.push(SimTab {
            id: id.clone(),
            doc,
            history: vec!["about:blank".into()],
            history_index: 0,
            instrumented: false,
            events: Vec::new(),
            viewport,
        });
        id
    }

    fn schedule(&mut self, tab: usize, due: f64, request: Option<String>, effects: Vec<Effect>) {
        self.next_seq += 1;
        let seq = self.next_seq;
        self.tabs[tab].doc.pending.push(Pending { due, seq, request, effects });
    }

    fn emit(&mut self, tab: usize, kind: crate::quiescence::EventKind, id: &str, t: f64) {
        let tab = &mut self.tabs[tab];
        if tab.instrumented {
            tab.events.push(NetworkEvent { kind, id: id.to_string(), t });
        }
    }

    fn run_effects(&mut self, tab: usize, effects: Vec<Effect>, t: f64) {
        let doc_id = self.tabs[tab].doc.id.clone();
        for e in effects {
            // A navigation replaces the document; later effects belonged to
            // the old one.
            if self.tabs.get(tab).map(|x| &x.doc.id) != Some(&doc_id) {
                return;
            }
            self.run_effect(tab, e, t);
        }
    }

    fn run_effect(&mut self, tab: usize, e: Effect, t: f64) {
        use crate::quiescence::EventKind;
        match e {
            Effect::Fetch { ms, then } => {
                self.next_request += 1;
                let id = format!("req-{}", self.next_request);
                self.emit(tab, EventKind::Start, &id, t);
                self.schedule(tab, t + ms as f64, Some(id), then);
            }
            Effect::Hold { ms } => {
                self.next_request += 1;
                let id = format!("req-{}", self.next_request);
                self.emit(tab, EventKind::Start, &id, t);
                if let Some(ms) = ms {
                    self.schedule(tab, t + ms as f64, Some(id), Vec::new());
                }
            }
            Effect::Delay { ms, then } => self.schedule(tab, t + ms as f64, None, then),
            Effect::Append { parent, nodes } => {
                let mut nodes = nodes;
                for n in &mut nodes {
                    self.assign_refs(n);
                }
                if let Some(p) = self.tabs[tab].doc.root.find_mut(&|n| n.attrs.get("id") == Some(&parent)) {
                    p.children.extend(nodes);
                }
            }
            Effect::Remove { id } => {
                self.tabs[tab].doc.root.remove_where(&|n| n.attrs.get("id") == Some(&id));
            }
            Effect::SetStyle { id, name, value } => {
                if let Some(n) = self.tabs[tab].doc.root.find_mut(&|n| n.attrs.get("id") == Some(&id)) {
                    n.style.insert(name, value);
                }
            }
            Effect::Navigate { url } => {
                let _ = self.load(tab, &url, true);
            }
            Effect::OpenTab { url } => {
                let viewport = self.tabs[tab].viewport;
                let id = self.open_tab(viewport);
                let idx = self.tab_index(&id).expect("tab just opened");
                let target = self.resolve_url(tab, &url).map(|u| u.to_string()).unwrap_or(url);
                let _ = self.load(idx, &target, true);
            }
            Effect::Post { key, value } => {
                if let Ok(u) = Url::parse(&self.tabs[tab].doc.url) {
                    self.site.post(&u, &key, &value);
                }
            }
            Effect::Reload => {
                let url = self.tabs[tab].doc.url.clone();
                let _ = self.load(tab, &url, false);
            }
        }
    }

    /// Completes every pending timer that is due, in time order.
    fn advance(&mut self) {
        let now = self.now();
        loop {
            let mut best: Option<(usize, usize, f64, u64)> = None;
            for (ti, t) in self.tabs.iter().enumerate() {
                for (pi, p) in t.doc.pending.iter().enumerate() {
                    if p.due <= now && best.is_none_or(|(_, _, d, s)| (p.due, p.seq) < (d, s)) {
                        best = Some((ti, pi, p.due, p.seq));
                    }
                }
            }
            let Some((ti, pi, due, _)) = best else { break };
            let p = self.tabs[ti].doc.pending.remove(pi);
            if let Some(id) = &p.request {
                self.emit(ti, crate::quiescence::EventKind::End, id, due);
            }
            self.run_effects(ti, p.effects, due);
        }
    }

    fn dispatch(&mut self, tab: usize, followups: Vec<Followup>) {
        let now = self.now();
        for f in followups {
            match f {
                Followup::Effects(es) => self.run_effects(tab, es, now),
                Followup::Navigate(u) => {
                    let _ = self.load(tab, &u, true);
                    return;
                }
                Followup::OpenTab(u) => self.run_effect(tab, Effect::OpenTab { url: u }, now),
                Followup::Submit(form) => {
                    self.submit(tab, form, now);
                    return;
                }
            }
        }
    }

    /// Collects handlers along the path from `target` to the root, plus the
    /// default action of the nearest link or submit control.
    fn click_followups(&self, tab: usize, target: u64) -> Vec<Followup> {
        let t = &self.tabs[tab];
        let path = t.path_to(target);
        let mut out = Vec::new();
        if path.iter().filter_map(|r| t.node(*r)).any(|n| n.is_disabled()) {
            return out;
        }
        for r in path.iter().rev() {
            let n = t.node(*r).expect("path node");
            if !n.handlers.click.is_empty() {
                out.push(Followup::Effects(n.handlers.click.clone()));
            }
        }
        for r in path.iter().rev() {
            let n = t.node(*r).expect("path node");
            if n.tag == "a" {
                if let Some(href) = n.attrs.get("href") {
                    if n.attrs.get("target").map(|s| s.as_str()) == Some("_blank") {
                        out.push(Followup::OpenTab(href.clone()));
                    } else {
                        out.push(Followup::Navigate(href.clone()));
                    }
                }
                break;
            }
            let submit = (n.tag == "button" && n.attrs.get("type").map(|s| s.as_str()).unwrap_or("submit") == "submit")
                || (n.tag == "input" && n.attrs.get("type").map(|s| s.as_str()) == Some("submit"));
            if submit {
                if let Some(form) = path.iter().rev().find(|r| t.node(**r).is_some_and(|f| f.tag == "form")) {
                    out.push(Followup::Submit(*form));
                }
                break;
            }
        }
        out
    }

    fn submit(&mut self, tab: usize, form: u64, now: f64) {
        let t = &self.tabs[tab];
        let Some(f) = t.node(form) else { return };
        let mut fields = Vec::new();
        f.walk(&mut |n| {
            if let Some(name) = n.attrs.get("name") {
                match n.tag.as_str() {
                    "input" | "textarea" => fields.push((name.clone(), n.live_value())),
                    "select" => {
                        let mut v = String::new();
                        n.walk(&mut |o| {
                            if o.tag == "option" && o.selected.unwrap_or_else(|| o.attrs.contains_key("selected")) {
                                v = o.attrs.get("value").cloned().unwrap_or_else(|| o.text_content());
                            }
                        });
                        fields.push((name.clone(), v));
                    }
                    _ => {}
                }
            }
        });
        let action = f.attrs.get("action").cloned().unwrap_or_else(|| t.doc.url.clone());
        let post = f.attrs.get("method").is_some_and(|m| m.eq_ignore_ascii_case("post"));
        let Ok(mut url) = self.resolve_url(tab, &action) else { return };
        if post {
            let target = url.clone();
            for (k, v) in &fields {
                self.site.post(&target, k, v);
            }
            self.run_effect(tab, Effect::Navigate { url: url.to_string() }, now);
        } else {
            url.query_pairs_mut().clear().extend_pairs(fields.iter());
            let _ = self.load(tab, url.as_str(), true);
        }
    }
}

/// Handle for inspecting and steering a simulated browser from tests.
#[derive(Clone)]
pub struct SimHandle(Arc<Mutex<SimState>>);

impl SimHandle {
    pub fn interactions(&self) -> Vec<Interaction> {
        self.0.lock().unwrap().interactions.clone()
    }

    pub fn scroll_calls(&self) -> usize {
        self.0.lock().unwrap().scroll_calls
    }

    pub fn is_shut_down(&self) -> bool {
        self.0.lock().unwrap().shut_down
    }

    pub fn tab_urls(&self) -> Vec<String> {
        self.0.lock().unwrap().tabs.iter().map(|t| t.doc.url.clone()).collect()
    }

    /// Removes every element with the given `id` attribute from all tabs.
    pub fn remove_element(&self, id: &str) {
        let mut s = self.0.lock().unwrap();
        for t in &mut s.tabs {
            t.doc.root.remove_where(&|n| n.attrs.get("id").map(|s| s.as_str()) == Some(id));
        }
    }
}

/// Creates simulated browsers serving pages from one site.
pub struct SimConnector {
    site: Arc<dyn SimSite>,
    sessions: Mutex<Vec<SimHandle>>,
}

impl SimConnector {
    pub fn new(site: Arc<dyn SimSite>) -> Self {
        SimConnector { site, sessions: Mutex::new(Vec::new()) }
    }

    pub fn backend(&self) -> (SimBackend, SimHandle) {
        let state = Arc::new(Mutex::new(SimState {
            site: self.site.clone(),
            epoch: Instant::now(),
            tabs: Vec::new(),
            next_tab: 0,
            next_doc: 0,
            next_ref: 0,
            next_request: 0,
            next_seq: 0,
            interactions: Vec::new(),
            scroll_calls: 0,
            shut_down: false,
        }));
        let handle = SimHandle(state.clone());
        self.sessions.lock().unwrap().push(handle.clone());
        (SimBackend { state }, handle)
    }

    pub fn sessions(&self) -> Vec<SimHandle> {
        self.sessions.lock().unwrap().clone()
    }

    /// Browsers not yet shut down.
    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().iter().filter(|h| !h.is_shut_down()).count()
    }
}

#[async_trait]
impl BrowserConnector for SimConnector {
    async fn connect(&self, endpoint: &str) -> Result<Box<dyn BrowserBackend>, DriverError> {
        if endpoint.starts_with("unreachable:") {
            return Err(DriverError::ConnectFailed(format!("{endpoint}: connection refused")));
        }
        Ok(Box::new(self.backend().0))
    }
}

pub struct SimBackend {
    state: Arc<Mutex<SimState>>,
}

impl SimBackend {
    fn with<R>(
        &self,
        tab: &TabId,
        f: impl FnOnce(&mut SimState, usize) -> Result<R, DriverError>,
    ) -> Result<R, DriverError> {
        let mut s = self.state.lock().unwrap();
        if s.shut_down {
            return Err(DriverError::SessionClosed);
        }
        s.advance();
        let idx = s.tab_index(tab)?;
        f(&mut s, idx)
    }

    fn element_action(
        &self,
        tab: &TabId,
        id: &SemanticId,
        f: impl FnOnce(&mut SimState, usize, u64) -> Vec<Followup>,
    ) -> Result<bool, DriverError> {
        self.with(tab, |s, i| {
            let Some(r) = s.tabs[i].find_semantic(id.as_str()).map(|n| n.node_ref) else { return Ok(false) };
            let follow = f(s, i, r);
            s.dispatch(i, follow);
            Ok(true)
        })
    }
}

#[async_trait]
impl BrowserBackend for SimBackend {
    fn now_ms(&self) -> f64 {
        self.state.lock().unwrap().now()
    }

    async fn new_tab(&mut self, viewport: Size) -> Result<TabId, DriverError> {
        let mut s = self.state.lock().unwrap();
        if s.shut_down {
            return Err(DriverError::SessionClosed);
        }
        Ok(s.open_tab(viewport))
    }

    async fn close_tab(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            s.tabs.remove(i);
            Ok(())
        })
    }

    async fn activate_tab(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.with(tab, |_, _| Ok(()))
    }

    async fn list_tabs(&mut self) -> Result<Vec<TabId>, DriverError> {
        let mut s = self.state.lock().unwrap();
        s.advance();
        Ok(s.tabs.iter().map(|t| t.id.clone()).collect())
    }

    async fn install_instrumentation(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            s.tabs[i].instrumented = true;
            Ok(())
        })
    }

    async fn navigate(&mut self, tab: &TabId, url: &str) -> Result<(), DriverError> {
        self.with(tab, |s, i| s.load(i, url, true))
    }

    async fn history(&mut self, tab: &TabId, delta: i32) -> Result<bool, DriverError> {
        self.with(tab, |s, i| {
            let t = &s.tabs[i];
            let target = t.history_index as i64 + delta as i64;
            if target < 0 || target >= t.history.len() as i64 {
                return Ok(false);
            }
            let url = t.history[target as usize].clone();
            s.tabs[i].history_index = target as usize;
            s.load(i, &url, false)?;
            Ok(true)
        })
    }

    async fn reload(&mut self, tab: &TabId) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            let url = s.tabs[i].doc.url.clone();
            s.load(i, &url, false)
        })
    }

    async fn poll_network(&mut self, tab: &TabId) -> Result<NetworkPoll, DriverError> {
        self.with(tab, |s, i| {
            let t = &mut s.tabs[i];
            if !t.instrumented {
                return Ok(NetworkPoll { document: None, events: Vec::new() });
            }
            Ok(NetworkPoll { document: Some(t.doc.id.clone()), events: std::mem::take(&mut t.events) })
        })
    }

    async fn snapshot(&mut self, tab: &TabId) -> Result<RawDomSnapshot, DriverError> {
        self.with(tab, |s, i| {
            let t = &s.tabs[i];
            if !t.instrumented {
                return Err(DriverError::SnapshotFailed("collection script not installed".into()));
            }
            let (boxes, h) = t.layout();
            let mut snap = RawDomSnapshot::new(&t.doc.url, t.to_raw(&t.doc.root, &boxes));
            snap.viewport = t.viewport;
            snap.document = Some(Size { width: t.viewport.width, height: h.max(t.viewport.height) });
            Ok(snap)
        })
    }

    async fn bind_ids(&mut self, tab: &TabId, bindings: &[IdBinding]) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            let map: HashMap<u64, &str> = bindings.iter().map(|b| (b.node_ref, b.id.as_str())).collect();
            s.tabs[i].doc.root.walk_mut(&mut |n| {
                n.attrs.shift_remove("data-semantic-id");
                if let Some(id) = map.get(&n.node_ref) {
                    n.attrs.insert("data-semantic-id".into(), id.to_string());
                }
            });
            Ok(())
        })
    }

    async fn scroll_into_view(&mut self, tab: &TabId, id: &SemanticId) -> Result<Option<BoxRect>, DriverError> {
        self.with(tab, |s, i| {
            s.scroll_calls += 1;
            let t = &mut s.tabs[i];
            let Some(r) = t.find_semantic(id.as_str()).map(|n| n.node_ref) else { return Ok(None) };
            let (boxes, h) = t.layout();
            let b = boxes.get(&r).copied().unwrap_or_default();
            let vh = t.viewport.height;
            if b.y < t.doc.scroll_y || b.y + b.height > t.doc.scroll_y + vh {
                let max = (h - vh).max(0.0);
                t.doc.scroll_y = (b.y + b.height / 2.0 - vh / 2.0).clamp(0.0, max);
            }
            Ok(Some(BoxRect::new(b.x, b.y - t.doc.scroll_y, b.width, b.height)))
        })
    }

    async fn mouse_move(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            let scroll = s.tabs[i].doc.scroll_y;
            let hit = s.tabs[i].hit(x, y + scroll);
            record(s, i, "move", x, y, hit);
            if hit == s.tabs[i].doc.hovered {
                return Ok(());
            }
            s.tabs[i].doc.hovered = hit;
            let Some(target) = hit else { return Ok(()) };
            let t = &s.tabs[i];
            let mut effects = Vec::new();
            for r in t.path_to(target).iter().rev() {
                if let Some(n) = t.node(*r) {
                    effects.extend(n.handlers.hover.iter().cloned());
                }
            }
            s.dispatch(i, vec![Followup::Effects(effects)]);
            Ok(())
        })
    }

    async fn mouse_click(&mut self, tab: &TabId, x: f64, y: f64) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            let scroll = s.tabs[i].doc.scroll_y;
            let hit = s.tabs[i].hit(x, y + scroll);
            record(s, i, "click", x, y, hit);
            let Some(target) = hit else { return Ok(()) };
            if let Some(n) = s.tabs[i].node_mut(target) {
                if n.tag == "input" && matches!(n.attrs.get("type").map(|s| s.as_str()), Some("checkbox" | "radio")) {
                    let was = n.checked.unwrap_or_else(|| n.attrs.contains_key("checked"));
                    n.checked = Some(!was);
                }
            }
            if s.tabs[i].node(target).is_some_and(|n| n.is_text_control()) {
                focus_node(&mut s.tabs[i], target);
            }
            let follow = s.click_followups(i, target);
            s.dispatch(i, follow);
            Ok(())
        })
    }

    async fn focus(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError> {
        self.element_action(tab, id, |s, i, r| {
            focus_node(&mut s.tabs[i], r);
            Vec::new()
        })
    }

    async fn press_key(&mut self, tab: &TabId, key: &str) -> Result<(), DriverError> {
        self.with(tab, |s, i| {
            let Some(r) = s.tabs[i].focused() else { return Ok(()) };
            let follow = match key {
                "Enter" => {
                    let t = &s.tabs[i];
                    let n = t.node(r).expect("focused node");
                    if n.tag == "textarea" {
                        edit(&mut s.tabs[i], r, |v, c| insert(v, c, "\n"))
                    } else if n.tag == "input" {
                        match t.path_to(r).iter().rev().find(|x| t.node(**x).is_some_and(|f| f.tag == "form")) {
                            Some(form) => vec![Followup::Submit(*form)],
                            None => Vec::new(),
                        }
                    } else {
                        s.click_followups(i, r)
                    }
                }
                "Backspace" => edit(&mut s.tabs[i], r, |v, (a, b)| {
                    if a != b {
                        splice(v, a, b, "")
                    } else if a > 0 {
                        splice(v, a - 1, a, "")
                    } else {
                        (v.to_string(), 0)
                    }
                }),
                "Delete" => edit(&mut s.tabs[i], r, |v, (a, b)| {
                    let len = v.chars().count();
                    if a != b {
                        splice(v, a, b, "")
                    } else if a < len {
                        splice(v, a, a + 1, "")
                    } else {
                        (v.to_string(), a)
                    }
                }),
                k if k.chars().count() == 1 => edit(&mut s.tabs[i], r, |v, c| insert(v, c, k)),
                _ => Vec::new(),
            };
            s.dispatch(i, follow);
            Ok(())
        })
    }

    async fn type_text(&mut self, tab: &TabId, text: &str) -> Result<(), DriverError> {
        for ch in text.chars() {
            self.press_key(tab, &ch.to_string()).await?;
        }
        Ok(())
    }

    async fn clear(&mut self, tab: &TabId, id: &SemanticId) -> Result<bool, DriverError> {
        self.element_action(tab, id, |s, i, r| {
            focus_node(&mut s.tabs[i], r);
            let n = s.tabs[i].node_mut(r).expect("resolved node");
            n.value = Some(String::new());
            n.selection = Some((0, 0));
            if n.tag != "input" && n.tag != "textarea" {
                n.children.retain(|c| !c.is_text());
            }
            vec![Followup::Effects(n.handlers.input.iter().chain(&n.handlers.change).cloned().collect())]
        })
    }

    async fn select_option(
        &mut self,
        tab: &TabId,
        select: &SemanticId,
        option: &SemanticId,
    ) -> Result<bool, DriverError> {
        let option = option.as_str().to_string();
        let mut found = false;
        let ok = self.element_action(tab, select, |s, i, r| {
            let sel = s.tabs[i].node_mut(r).expect("resolved node");
            let multiple = sel.attrs.contains_key("multiple");
            let mut hit = None;
            sel.walk_mut(&mut |o| {
                if o.tag == "option" && o.attrs.get("data-semantic-id") == Some(&option) {
                    hit = Some(o.node_ref);
                }
            });
            let Some(target) = hit else { return Vec::new() };
            found = true;
            sel.walk_mut(&mut |o| {
                if o.tag == "option" {
                    let was = o.selected.unwrap_or_else(|| o.attrs.contains_key("selected"));
                    o.selected = Some(if o.node_ref == target {
                        !multiple || !was
                    } else if multiple {
                        was
                    } else {
                        false
                    });
                }
            });
            vec![Followup::Effects(sel.handlers.change.clone())]
        })?;
        Ok(ok && found)
    }

    async fn animation_frames(&mut self, tab: &TabId, n: u32) -> Result<(), DriverError> {
        self.with(tab, |_, _| Ok(()))?;
        tokio::time::sleep(std::time::Duration::from_millis(FRAME_MS * n as u64)).await;
        Ok(())
    }

    async fn shutdown(&mut self) -> Result<(), DriverError> {
        let mut s = self.state.lock().unwrap();
        s.tabs.clear();
        s.shut_down = true;
        Ok(())
    }
}

fn record(s: &mut SimState, tab: usize, kind: &'static str, x: f64, y: f64, hit: Option<u64>) {
    let t = &s.tabs[tab];
    let (boxes, _) = t.layout();
    // Report the nearest element carrying an id, the one the agent targeted.
    let mut target_box = None;
    let mut target_id = None;
    if let Some(h) = hit {
        for r in t.path_to(h).iter().rev() {
            if let Some(id) = t.node(*r).and_then(|n| n.attrs.get("data-semantic-id")) {
                let b = boxes.get(r).copied().unwrap_or_default();
                target_box = Some(BoxRect::new(b.x, b.y - t.doc.scroll_y, b.width, b.height));
                target_id = Some(id.clone());
                break;
            }
        }
    }
    s.interactions.push(Interaction { kind, x, y, target_box, target_id });
}

fn focus_node(t: &mut SimTab, r: u64) {
    t.doc.root.walk_mut(&mut |n| {
        n.focused = n.node_ref == r;
    });
    if let Some(n) = t.node_mut(r) {
        let len = n.live_value().chars().count();
        if n.is_text_control() {
            n.selection = Some((len, len));
        }
    }
}

fn splice(v: &str, a: usize, b: usize, with: &str) -> (String, usize) {
    let chars: Vec<char> = v.chars().collect();
    let mut out: String = chars[..a].iter().collect();
    out.push_str(with);
    out.extend(&chars[b..]);
    (out, a + with.chars().count())
}

fn insert(v: &str, (a, b): (usize, usize), s: &str) -> (String, usize) {
    splice(v, a, b, s)
}

/// Applies a text edit at the caret of a text control and returns its input
/// handlers. Content-editable regions append to their text.
fn edit(t: &mut SimTab, r: u64, f: impl FnOnce(&str, (usize, usize)) -> (String, usize)) -> Vec<Followup> {
    let Some(n) = t.node_mut(r) else { return Vec::new() };
    if n.is_disabled() || n.attrs.contains_key("readonly") {
        return Vec::new();
    }
    if n.is_text_control() {
        let v = n.live_value();
        let len = v.chars().count();
        let (a, b) = n.selection.unwrap_or((len, len));
        let (nv, caret) = f(&v, (a.min(len), b.min(len)));
        n.value = Some(nv);
        n.selection = Some((caret, caret));
    } else if n.attrs.get("contenteditable").is_some_and(|v| v != "false") {
        let v = n.text_content();
        let len = v.chars().count();
        let (nv, _) = f(&v, (len, len));
        n.children.retain(|c| !c.is_text());
        n.children.insert(0, text(&nv));
    } else {
        return Vec::new();
    }
    vec![Followup::Effects(n.handlers.input.clone())]
}
