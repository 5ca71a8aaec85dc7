//! Observation compiler.
//!
//! Turns a [`RawDomSnapshot`] collected from a live page into the compact
//! five-component [`ObservationDocument`] handed to agents: the stripped and
//! annotated HTML plus the clickable, hoverable, input, and select lists.
//!
//! The pipeline is `filter -> prune/flatten -> ids -> state capture`, with
//! interactivity decided while filtering so that flattening never collapses
//! an element the agent could act on.

mod compile;
pub mod corpus;
mod filter;
mod flatten;
mod html;
mod ids;
mod interactive;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compile::{compile_observation, compile_with_bindings, CompiledObservation, IdBinding};
pub use filter::{filter_attributes, filter_node, FilterContext, FilterVerdict, ATTRIBUTE_WHITELIST, EXCLUDED_TAGS};
pub use flatten::{prune_and_flatten, KEEP_EMPTY_TAGS};
pub use html::{parse_stripped_html, raw_outer_html};
pub use ids::{assign_semantic_ids, slugify, MAX_SEMANTIC_ID_LEN, MAX_SLUG_LEN};
pub use interactive::{detect_clickable, detect_hoverable, NATIVE_CLICKABLE_TAGS};
pub use state::{capture_input_state, capture_select_state, is_text_bearing};

/// Wire schema tag carried by every raw snapshot.
pub const RAW_DOM_SCHEMA: &str = "raw-dom/1";

/// Tag used for text nodes inside a [`RawNode`] tree.
pub const TEXT_TAG: &str = "#text";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("malformed snapshot at {path}: {reason}")]
    MalformedSnapshot { path: String, reason: String },
    #[error("snapshot json: {0}")]
    Json(String),
}

impl ObsError {
    fn malformed(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ObsError::MalformedSnapshot { path: path.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size {
    pub width: f64,
    pub height: f64,
}

impl Default for Size {
    fn default() -> Self {
        Size { width: 1280.0, height: 720.0 }
    }
}

/// Border box in absolute page coordinates (CSS pixels).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxRect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxRect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BoxRect { x, y, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x <= self.x + self.width && y >= self.y && y <= self.y + self.height
    }

    /// True when the two rectangles share a region of positive area, or when
    /// a degenerate rectangle lies inside `other`.
    pub fn intersects(&self, other: &BoxRect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListenerFlag {
    HoverListener,
    ClickListener,
}

/// Live values read from the element at collection time. Attributes only
/// reflect the initial markup, so these win whenever present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiple: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_end: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub focused: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readonly: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub content_editable: bool,
}

/// One node of the collected DOM. Text nodes use the tag `#text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub tag: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub attributes: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub computed_style: BTreeMap<String, String>,
    /// `None` means geometry is unknown and the geometric rules are skipped.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoxRect>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scrollable: bool,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub listener_flags: BTreeSet<ListenerFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<RuntimeState>,
    /// Handle assigned by the collection script so ids can be written back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ref: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<RawNode>,
}

impl RawNode {
    pub fn element(tag: &str) -> Self {
        RawNode {
            tag: tag.to_ascii_lowercase(),
            attributes: IndexMap::new(),
            text: None,
            computed_style: BTreeMap::new(),
            bbox: None,
            scrollable: false,
            listener_flags: BTreeSet::new(),
            state: None,
            node_ref: None,
            children: Vec::new(),
        }
    }

    pub fn text_node(text: &str) -> Self {
        let mut n = RawNode::element(TEXT_TAG);
        n.text = Some(text.to_string());
        n
    }

    pub fn is_text(&self) -> bool {
        self.tag == TEXT_TAG
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attributes.contains_key(name)
    }

    pub fn style(&self, name: &str) -> Option<&str> {
        self.computed_style.get(name).map(|s| s.trim())
    }

    pub fn opacity(&self) -> Option<f64> {
        self.style("opacity").and_then(|v| v.parse::<f64>().ok())
    }

    pub fn with_attr(mut self, name: &str, value: &str) -> Self {
        self.attributes.insert(name.to_string(), value.to_string());
        self
    }

    pub fn with_style(mut self, name: &str, value: &str) -> Self {
        self.computed_style.insert(name.to_string(), value.to_string());
        self
    }

    pub fn with_box(mut self, x: f64, y: f64, width: f64, height: f64) -> Self {
        self.bbox = Some(BoxRect::new(x, y, width, height));
        self
    }

    pub fn with_listener(mut self, flag: ListenerFlag) -> Self {
        self.listener_flags.insert(flag);
        self
    }

    pub fn with_state(mut self, state: RuntimeState) -> Self {
        self.state = Some(state);
        self
    }

    pub fn with_ref(mut self, node_ref: u64) -> Self {
        self.node_ref = Some(node_ref);
        self
    }

    pub fn with_text(mut self, text: &str) -> Self {
        self.children.push(RawNode::text_node(text));
        self
    }

    pub fn with_child(mut self, child: RawNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_children(mut self, children: impl IntoIterator<Item = RawNode>) -> Self {
        self.children.extend(children);
        self
    }

    /// Depth-first pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a RawNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Finds the first node (pre-order) satisfying `pred`.
    pub fn find(&self, pred: &impl Fn(&RawNode) -> bool) -> Option<&RawNode> {
        if pred(self) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(pred))
    }

    pub fn find_mut(&mut self, pred: &impl Fn(&RawNode) -> bool) -> Option<&mut RawNode> {
        if pred(self) {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(pred))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDomSnapshot {
    pub schema: String,
    pub url: String,
    #[serde(default)]
    pub viewport: Size,
    /// Full scrollable extent of the document; defaults to the viewport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<Size>,
    pub root: RawNode,
}

impl RawDomSnapshot {
    pub fn new(url: &str, root: RawNode) -> Self {
        RawDomSnapshot {
            schema: RAW_DOM_SCHEMA.to_string(),
            url: url.to_string(),
            viewport: Size::default(),
            document: None,
            root,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ObsError> {
        let snap: RawDomSnapshot = serde_json::from_str(text).map_err(|e| ObsError::Json(e.to_string()))?;
        snap.validate()?;
        Ok(snap)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    /// Page extent used by the off-screen rule.
    pub fn extent(&self) -> Size {
        let mut ext = self.document.unwrap_or(self.viewport);
        ext.width = ext.width.max(self.viewport.width);
        ext.height = ext.height.max(self.viewport.height);
        ext
    }

    pub fn validate(&self) -> Result<(), ObsError> {
        if self.schema != RAW_DOM_SCHEMA {
            return Err(ObsError::malformed("schema", format!("unsupported schema {:?}", self.schema)));
        }
        for (name, v) in [("viewport.width", self.viewport.width), ("viewport.height", self.viewport.height)] {
            if !v.is_finite() || v < 0.0 {
                return Err(ObsError::malformed(name, "must be a finite non-negative number"));
            }
        }
        if self.root.is_text() {
            return Err(ObsError::malformed("root", "root must be an element"));
        }
        validate_node(&self.root, "root")
    }
}

fn validate_node(node: &RawNode, path: &str) -> Result<(), ObsError> {
    if node.tag.is_empty() {
        return Err(ObsError::malformed(path, "empty tag name"));
    }
    if node.is_text() {
        if !node.children.is_empty() {
            return Err(ObsError::malformed(path, "text node with children"));
        }
        return Ok(());
    }
    if node.tag.chars().any(|c| c.is_ascii_uppercase() || c.is_whitespace()) {
        return Err(ObsError::malformed(path, format!("tag {:?} is not a lowercase element name", node.tag)));
    }
    if let Some(raw) = node.style("opacity") {
        match raw.parse::<f64>() {
            Ok(o) if (0.0..=1.0).contains(&o) => {}
            _ => return Err(ObsError::malformed(path, format!("opacity {raw:?} outside [0,1]"))),
        }
    }
    if let Some(b) = node.bbox {
        if !(b.x.is_finite() && b.y.is_finite() && b.width.is_finite() && b.height.is_finite()) {
            return Err(ObsError::malformed(path, "non-finite box"));
        }
        if b.width < 0.0 || b.height < 0.0 {
            return Err(ObsError::malformed(path, "negative box size"));
        }
    }
    if let Some(st) = &node.state {
        if let (Some(s), Some(e)) = (st.selection_start, st.selection_end) {
            if s > e {
                return Err(ObsError::malformed(path, "selection start after end"));
            }
        }
    }
    for (i, c) in node.children.iter().enumerate() {
        validate_node(c, &format!("{path}/{}[{i}]", c.tag))?;
    }
    Ok(())
}

/// Stable, human-readable handle for an interactive element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SemanticId(String);

impl SemanticId {
    pub fn new(value: impl Into<String>) -> Result<Self, String> {
        let value = value.into();
        if Self::is_valid(&value) {
            Ok(SemanticId(value))
        } else {
            Err(format!("invalid semantic id {value:?}"))
        }
    }

    /// Lowercase ASCII alphanumerics and hyphens, 1..=64 characters.
    pub fn is_valid(s: &str) -> bool {
        !s.is_empty()
            && s.len() <= MAX_SEMANTIC_ID_LEN
            && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Placeholder carried by records until ids are assigned.
    pub(crate) fn pending() -> Self {
        SemanticId("pending".to_string())
    }

    pub(crate) fn from_trusted(s: String) -> Self {
        debug_assert!(Self::is_valid(&s), "{s:?}");
        SemanticId(s)
    }
}

impl TryFrom<String> for SemanticId {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        SemanticId::new(value)
    }
}

impl From<SemanticId> for String {
    fn from(id: SemanticId) -> String {
        id.0
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for SemanticId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for SemanticId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStateRecord {
    #[serde(rename = "id")]
    pub semantic_id: SemanticId,
    #[serde(rename = "type")]
    pub input_type: String,
    #[serde(rename = "value")]
    pub current_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_value: Option<f64>,
    pub editable: bool,
    #[serde(rename = "selection", default, skip_serializing_if = "Option::is_none")]
    pub selection_range: Option<(usize, usize)>,
    pub focused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRecord {
    #[serde(rename = "id")]
    pub semantic_id: SemanticId,
    pub text: String,
    pub value: String,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectStateRecord {
    #[serde(rename = "id")]
    pub semantic_id: SemanticId,
    #[serde(rename = "value")]
    pub current_value: String,
    pub selected_index: i64,
    pub multiple: bool,
    pub options: Vec<OptionRecord>,
}

/// Clickable entry: the id plus the label the agent sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickableEntry {
    pub id: SemanticId,
    pub label: String,
}

/// The observation delivered to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDocument {
    pub html: String,
    pub clickables: Vec<ClickableEntry>,
    pub hoverables: Vec<SemanticId>,
    pub inputs: Vec<InputStateRecord>,
    pub selects: Vec<SelectStateRecord>,
    pub url: String,
    pub title: String,
}

impl ObservationDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("observation serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("observation serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ObsError> {
        serde_json::from_str(text).map_err(|e| ObsError::Json(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Digest with every occurrence of `endpoint` replaced by `{endpoint}`,
    /// so observations of twin environments on different ports compare equal.
    pub fn portable_digest(&self, endpoint: &str) -> String {
        use sha2::{Digest, Sha256};
        let json = if endpoint.is_empty() { self.to_json() } else { self.to_json().replace(endpoint, "{endpoint}") };
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn is_clickable(&self, id: &str) -> bool {
        self.clickables.iter().any(|c| c.id == id)
    }

    pub fn is_hoverable(&self, id: &str) -> bool {
        self.hoverables.iter().any(|h| h == id)
    }

    pub fn input(&self, id: &str) -> Option<&InputStateRecord> {
        self.inputs.iter().find(|i| i.semantic_id == id)
    }

    pub fn select(&self, id: &str) -> Option<&SelectStateRecord> {
        self.selects.iter().find(|s| s.semantic_id == id)
    }

    /// Whether `id` names any interactive element or option.
    pub fn knows(&self, id: &str) -> bool {
        self.is_clickable(id)
            || self.is_hoverable(id)
            || self.input(id).is_some()
            || self.select(id).is_some()
            || self.selects.iter().any(|s| s.options.iter().any(|o| o.semantic_id == id))
    }

    /// Every interactive id, sorted and deduplicated.
    pub fn interactive_ids(&self) -> BTreeSet<String> {
        let mut ids = BTreeSet::new();
        ids.extend(self.clickables.iter().map(|c| c.id.to_string()));
        ids.extend(self.hoverables.iter().map(|h| h.to_string()));
        ids.extend(self.inputs.iter().map(|i| i.semantic_id.to_string()));
        for s in &self.selects {
            ids.insert(s.semantic_id.to_string());
            ids.extend(s.options.iter().map(|o| o.semantic_id.to_string()));
        }
        ids
    }
}

/// A child of a stripped element: a nested element or a run of text.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum StrippedChild {
    Element(StrippedNode),
    Text(String),
}

impl StrippedChild {
    pub fn as_element(&self) -> Option<&StrippedNode> {
        match self {
            StrippedChild::Element(e) => Some(e),
            StrippedChild::Text(_) => None,
        }
    }
}

/// Control state captured from the runtime, carried on the stripped node
/// until ids are assigned.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ControlState {
    #[default]
    None,
    Input(InputStateRecord),
    Select(SelectStateRecord),
    Option {
        text: String,
        value: String,
        selected: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrippedNode {
    pub tag: String,
    pub retained_attributes: BTreeMap<String, String>,
    pub semantic_id: Option<SemanticId>,
    pub data_clickable: bool,
    pub data_maybe_hoverable: bool,
    pub content_editable: bool,
    pub control: ControlState,
    pub node_ref: Option<u64>,
    pub children: Vec<StrippedChild>,
}

impl StrippedNode {
    pub fn new(tag: &str) -> Self {
        StrippedNode {
            tag: tag.to_string(),
            retained_attributes: BTreeMap::new(),
            semantic_id: None,
            data_clickable: false,
            data_maybe_hoverable: false,
            content_editable: false,
            control: ControlState::None,
            node_ref: None,
            children: Vec::new(),
        }
    }

    pub fn has_text(&self) -> bool {
        self.children.iter().any(|c| matches!(c, StrippedChild::Text(_)))
    }

    pub fn element_children(&self) -> impl Iterator<Item = &StrippedNode> {
        self.children.iter().filter_map(StrippedChild::as_element)
    }

    pub fn is_interactive(&self) -> bool {
        self.data_clickable || self.data_maybe_hoverable || !matches!(self.control, ControlState::None)
    }

    /// Normalized text of the whole subtree, space separated.
    pub fn visible_text(&self) -> String {
        let mut parts = Vec::new();
        self.collect_text(&mut parts);
        parts.join(" ")
    }

    fn collect_text<'a>(&'a self, out: &mut Vec<&'a str>) {
        for c in &self.children {
            match c {
                StrippedChild::Text(t) => out.push(t),
                StrippedChild::Element(e) => e.collect_text(out),
            }
        }
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a StrippedNode)) {
        f(self);
        for c in self.element_children() {
            c.walk(f);
        }
    }

    /// Serialized HTML with stable attribute order.
    pub fn to_html(&self) -> String {
        let mut out = String::new();
        html::write_stripped(self, &mut out);
        out
    }
}
