use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::interactive::{detect_clickable, detect_hoverable};
use super::state::{capture_input_state, is_text_bearing};
use super::{ControlState, RawNode, Size, StrippedChild, StrippedNode};

/// Tags dropped together with their whole subtree.
pub const EXCLUDED_TAGS: &[&str] =
    &["script", "style", "link", "meta", "noscript", "template", "iframe", "video", "audio", "canvas"];

/// Attributes retained besides `aria-*` and `data-*`.
pub const ATTRIBUTE_WHITELIST: &[&str] = &[
    "id",
    "name",
    "value",
    "placeholder",
    "role",
    "tabindex",
    "href",
    "type",
    "title",
    "alt",
    "checked",
    "disabled",
    "selected",
    "for",
];

/// Attributes the compiler writes itself; stale copies from the live DOM are
/// discarded before annotation.
pub(crate) const COMPILER_ATTRIBUTES: &[&str] =
    &["data-semantic-id", "data-clickable", "data-maybe-hoverable", "data-contenteditable"];

/// Structural tags whose style and geometry are never inspected: `head` and
/// `title` are display:none by definition, and the document root frames
/// everything else.
const STRUCTURAL_TAGS: &[&str] = &["html", "body", "head", "title"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterContext {
    /// Scrollable extent of the page; `None` disables the off-screen rule.
    pub extent: Option<Size>,
    /// Some ancestor is a scroll container.
    pub inside_scroller: bool,
    /// Inside a `<select>`: options have no layout box of their own.
    pub inside_select: bool,
    /// Inside `<head>`.
    pub inside_head: bool,
}

impl FilterContext {
    pub fn for_extent(extent: Size) -> Self {
        FilterContext { extent: Some(extent), ..Default::default() }
    }

    fn descend(&self, node: &RawNode) -> Self {
        FilterContext {
            extent: self.extent,
            inside_scroller: self.inside_scroller || node.scrollable,
            inside_select: self.inside_select || node.tag == "select",
            inside_head: self.inside_head || node.tag == "head",
        }
    }

    fn style_exempt(&self, node: &RawNode) -> bool {
        STRUCTURAL_TAGS.contains(&node.tag.as_str())
            || self.inside_head
            || (self.inside_select && matches!(node.tag.as_str(), "option" | "optgroup"))
    }
}

/// Decides whether a node (and its subtree) survives filtering.
pub fn filter_node(node: &RawNode, ctx: &FilterContext) -> FilterVerdict {
    if node.is_text() {
        return FilterVerdict::Keep;
    }
    if EXCLUDED_TAGS.contains(&node.tag.as_str()) {
        return FilterVerdict::Drop;
    }
    if ctx.style_exempt(node) {
        return FilterVerdict::Keep;
    }
    if node.style("display") == Some("none") || node.style("visibility") == Some("hidden") {
        return FilterVerdict::Drop;
    }
    if node.opacity() == Some(0.0) {
        return FilterVerdict::Drop;
    }
    if let Some(b) = node.bbox {
        if b.width == 0.0 && b.height == 0.0 {
            return FilterVerdict::Drop;
        }
        if let Some(ext) = ctx.extent {
            let outside = b.x + b.width <= 0.0 || b.y + b.height <= 0.0 || b.x >= ext.width || b.y >= ext.height;
            if outside && !node.scrollable && !ctx.inside_scroller {
                return FilterVerdict::Drop;
            }
        }
    }
    FilterVerdict::Keep
}

/// Keeps the whitelisted names plus every `aria-*` and `data-*` attribute.
pub fn filter_attributes(attrs: &IndexMap<String, String>) -> BTreeMap<String, String> {
    attrs
        .iter()
        .filter(|(name, _)| {
            let name = name.as_str();
            ATTRIBUTE_WHITELIST.contains(&name) || name.starts_with("aria-") || name.starts_with("data-")
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn normalize_text(text: &str) -> Option<String> {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    (!joined.is_empty()).then_some(joined)
}

/// Converts the surviving part of a raw tree into stripped nodes, deciding
/// interactivity and capturing control state along the way.
pub(crate) fn strip(node: &RawNode, ctx: &FilterContext) -> Option<StrippedChild> {
    if filter_node(node, ctx) == FilterVerdict::Drop {
        return None;
    }
    if node.is_text() {
        return node.text.as_deref().and_then(normalize_text).map(StrippedChild::Text);
    }

    let mut out = StrippedNode::new(&node.tag);
    out.node_ref = node.node_ref;
    out.retained_attributes = filter_attributes(&node.attributes);
    for a in COMPILER_ATTRIBUTES {
        out.retained_attributes.remove(*a);
    }
    out.data_clickable = detect_clickable(node);
    out.data_maybe_hoverable = detect_hoverable(node);
    out.content_editable = is_content_editable(node);

    // Live values replace the markup defaults in the serialized snapshot.
    let state = node.state.as_ref();
    if let Some(v) = state.and_then(|s| s.value.as_ref()) {
        if matches!(node.tag.as_str(), "input" | "option") {
            out.retained_attributes.insert("value".into(), v.clone());
        }
    }
    if let Some(checked) = state.and_then(|s| s.checked) {
        set_flag(&mut out.retained_attributes, "checked", checked);
    }
    if node.tag == "option" {
        let selected = state.and_then(|s| s.selected).unwrap_or_else(|| node.has_attr("selected"));
        set_flag(&mut out.retained_attributes, "selected", selected);
    }

    // Element-level text is treated as a leading text child.
    if let Some(t) = node.text.as_deref().and_then(normalize_text) {
        out.children.push(StrippedChild::Text(t));
    }
    let child_ctx = ctx.descend(node);
    for c in &node.children {
        if let Some(sc) = strip(c, &child_ctx) {
            out.children.push(sc);
        }
    }

    if node.tag == "textarea" {
        // The textarea's text children are its markup default; show the live value.
        if let Some(v) = state.and_then(|s| s.value.as_deref()) {
            out.children.retain(|c| !matches!(c, StrippedChild::Text(_)));
            if let Some(t) = normalize_text(v) {
                out.children.insert(0, StrippedChild::Text(t));
            }
        }
    }

    out.control = if is_text_bearing(node) {
        capture_input_state(node).map(ControlState::Input).unwrap_or_default()
    } else if node.tag == "option" {
        let text = out.visible_text();
        let value = out.retained_attributes.get("value").cloned().unwrap_or_else(|| text.clone());
        ControlState::Option { text, value, selected: out.retained_attributes.contains_key("selected") }
    } else if node.tag == "select" {
        match super::state::select_from_stripped(node, &out) {
            Some(rec) => {
                let flags: Vec<bool> = rec.options.iter().map(|o| o.selected).collect();
                sync_option_flags(&mut out, &mut flags.into_iter());
                ControlState::Select(rec)
            }
            None => ControlState::None,
        }
    } else {
        ControlState::None
    };
    Some(StrippedChild::Element(out))
}

/// Mirrors the select record's selection back onto the option elements.
fn sync_option_flags(node: &mut StrippedNode, flags: &mut impl Iterator<Item = bool>) {
    for c in &mut node.children {
        if let StrippedChild::Element(e) = c {
            if let ControlState::Option { selected, .. } = &mut e.control {
                let on = flags.next().unwrap_or(false);
                *selected = on;
                set_flag(&mut e.retained_attributes, "selected", on);
            } else {
                sync_option_flags(e, flags);
            }
        }
    }
}

fn set_flag(attrs: &mut BTreeMap<String, String>, name: &str, on: bool) {
    if on {
        attrs.insert(name.to_string(), String::new());
    } else {
        attrs.remove(name);
    }
}

pub(crate) fn is_content_editable(node: &RawNode) -> bool {
    if let Some(st) = &node.state {
        if st.content_editable {
            return true;
        }
    }
    match node.attr("contenteditable") {
        Some(v) => !v.eq_ignore_ascii_case("false"),
        None => node.attr("data-contenteditable") == Some("true"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visible(tag: &str) -> RawNode {
        RawNode::element(tag)
            .with_style("display", "block")
            .with_style("visibility", "visible")
            .with_style("opacity", "1")
            .with_box(10.0, 10.0, 80.0, 24.0)
    }

    fn ctx() -> FilterContext {
        FilterContext::for_extent(Size { width: 1280.0, height: 2000.0 })
    }

    #[test]
    fn blacklisted_tags_are_dropped_whatever_the_style() {
        for tag in EXCLUDED_TAGS {
            assert_eq!(filter_node(&visible(tag), &ctx()), FilterVerdict::Drop, "{tag}");
        }
    }

    #[test]
    fn visible_button_is_kept() {
        assert_eq!(filter_node(&visible("button"), &ctx()), FilterVerdict::Keep);
    }

    #[test]
    fn css_invisibility_drops() {
        assert_eq!(filter_node(&visible("div").with_style("opacity", "0"), &ctx()), FilterVerdict::Drop);
        assert_eq!(filter_node(&visible("div").with_style("opacity", "0.0"), &ctx()), FilterVerdict::Drop);
        assert_eq!(filter_node(&visible("div").with_style("display", "none"), &ctx()), FilterVerdict::Drop);
        assert_eq!(filter_node(&visible("div").with_style("visibility", "hidden"), &ctx()), FilterVerdict::Drop);
        assert_eq!(filter_node(&visible("div").with_style("opacity", "0.2"), &ctx()), FilterVerdict::Keep);
    }

    #[test]
    fn zero_size_needs_both_dimensions() {
        assert_eq!(filter_node(&visible("div").with_box(0.0, 0.0, 0.0, 0.0), &ctx()), FilterVerdict::Drop);
        assert_eq!(filter_node(&visible("hr").with_box(0.0, 5.0, 500.0, 0.0), &ctx()), FilterVerdict::Keep);
    }

    #[test]
    fn off_screen_uses_scrollable_extent() {
        // Below the fold but inside the document: reachable by auto-scroll.
        assert_eq!(filter_node(&visible("div").with_box(0.0, 1500.0, 100.0, 20.0), &ctx()), FilterVerdict::Keep);
        // Parked far to the left, the classic skip-link trick.
        assert_eq!(filter_node(&visible("a").with_box(-9999.0, 0.0, 100.0, 20.0), &ctx()), FilterVerdict::Drop);
        let mut scroller = visible("div").with_box(-9999.0, 0.0, 100.0, 20.0);
        scroller.scrollable = true;
        assert_eq!(filter_node(&scroller, &ctx()), FilterVerdict::Keep);
        let inner = FilterContext { inside_scroller: true, ..ctx() };
        assert_eq!(filter_node(&visible("li").with_box(0.0, 5000.0, 10.0, 10.0), &inner), FilterVerdict::Keep);
    }

    #[test]
    fn options_and_head_skip_geometry() {
        let opt = RawNode::element("option").with_box(0.0, 0.0, 0.0, 0.0).with_style("display", "block");
        let in_select = FilterContext { inside_select: true, ..ctx() };
        assert_eq!(filter_node(&opt, &in_select), FilterVerdict::Keep);
        assert_eq!(filter_node(&opt, &ctx()), FilterVerdict::Drop);
        let title = RawNode::element("title").with_style("display", "none");
        assert_eq!(filter_node(&title, &ctx()), FilterVerdict::Keep);
    }

    #[test]
    fn attribute_whitelist() {
        let mut a = IndexMap::new();
        a.insert("onclick".to_string(), "f()".to_string());
        a.insert("placeholder".to_string(), "Search".to_string());
        let kept = filter_attributes(&a);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept["placeholder"], "Search");

        let mut a = IndexMap::new();
        a.insert("aria-label".to_string(), "close".to_string());
        a.insert("style".to_string(), "color:red".to_string());
        let kept = filter_attributes(&a);
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), vec![("aria-label".to_string(), "close".to_string())]);

        assert!(filter_attributes(&IndexMap::new()).is_empty());
    }

    #[test]
    fn whitelist_has_fourteen_names() {
        assert_eq!(ATTRIBUTE_WHITELIST.len(), 14);
        let mut a = IndexMap::new();
        for n in ATTRIBUTE_WHITELIST {
            a.insert(n.to_string(), "x".into());
        }
        a.insert("data-x".into(), "1".into());
        a.insert("class".into(), "btn".into());
        a.insert("ariax".into(), "no".into());
        let kept = filter_attributes(&a);
        assert_eq!(kept.len(), 15);
        assert!(!kept.contains_key("class") && !kept.contains_key("ariax"));
    }
}
