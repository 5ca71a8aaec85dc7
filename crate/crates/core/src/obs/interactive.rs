use super::{ListenerFlag, RawNode};

pub const NATIVE_CLICKABLE_TAGS: &[&str] = &["button", "input", "select", "summary", "area"];

const CLICKABLE_ROLES: &[&str] = &["button", "link"];

/// Heuristic clickability of a raw element.
///
/// Native controls, anchors with `href`, elements with a click handler
/// (listener flag or inline `onclick`), ARIA button/link roles, and anything
/// rendered with a pointer cursor qualify, unless disabled by attribute or
/// by `pointer-events: none`.
pub fn detect_clickable(node: &RawNode) -> bool {
    if node.is_text() {
        return false;
    }
    let tag = node.tag.as_str();
    let candidate = NATIVE_CLICKABLE_TAGS.contains(&tag)
        || (tag == "a" && node.has_attr("href"))
        || node.listener_flags.contains(&ListenerFlag::ClickListener)
        || node.has_attr("onclick")
        || node.attr("role").map(|r| CLICKABLE_ROLES.iter().any(|c| r.trim().eq_ignore_ascii_case(c))).unwrap_or(false)
        || node.style("cursor") == Some("pointer");
    candidate && !is_disabled(node)
}

pub(crate) fn is_disabled(node: &RawNode) -> bool {
    node.has_attr("disabled") || node.style("pointer-events") == Some("none")
}

/// Hover sensitivity comes from the runtime listener patch, which either sets
/// the flag directly or leaves `data-maybe-hoverable="true"` on the element.
pub fn detect_hoverable(node: &RawNode) -> bool {
    if node.is_text() || is_disabled(node) {
        return false;
    }
    node.listener_flags.contains(&ListenerFlag::HoverListener) || node.attr("data-maybe-hoverable") == Some("true")
}
