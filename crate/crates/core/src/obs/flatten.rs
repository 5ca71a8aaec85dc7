use super::{StrippedChild, StrippedNode};

/// Elements kept even when they end up with no content.
pub const KEEP_EMPTY_TAGS: &[&str] = &["input", "select", "textarea", "button", "img", "head", "title", "html", "body"];

const WRAPPER_TAGS: &[&str] = &["div", "span"];

fn is_wrapper(node: &StrippedNode) -> bool {
    WRAPPER_TAGS.contains(&node.tag.as_str())
        && node.retained_attributes.is_empty()
        && node.semantic_id.is_none()
        && !node.is_interactive()
        && !node.has_text()
}

fn is_prunable(node: &StrippedNode) -> bool {
    node.children.is_empty() && !node.is_interactive() && !KEEP_EMPTY_TAGS.contains(&node.tag.as_str())
}

/// Collapses single-child wrapper chains and removes empty elements.
///
/// Works bottom-up in one pass; every replacement is already a fixpoint, so
/// a second run is a no-op. The root itself is never removed.
pub fn prune_and_flatten(tree: StrippedNode) -> StrippedNode {
    let mut node = flatten_children(tree);
    while is_wrapper(&node) && node.children.len() == 1 {
        match node.children.pop() {
            Some(StrippedChild::Element(child)) => node = child,
            Some(other) => {
                node.children.push(other);
                break;
            }
            None => break,
        }
    }
    node
}

fn flatten_children(mut node: StrippedNode) -> StrippedNode {
    let children = std::mem::take(&mut node.children);
    for child in children {
        match child {
            StrippedChild::Text(t) => node.children.push(StrippedChild::Text(t)),
            StrippedChild::Element(e) => {
                if let Some(kept) = flatten_node(e) {
                    node.children.push(StrippedChild::Element(kept));
                }
            }
        }
    }
    node
}

fn flatten_node(node: StrippedNode) -> Option<StrippedNode> {
    let mut node = flatten_children(node);
    if is_prunable(&node) {
        return None;
    }
    if is_wrapper(&node) && node.children.len() == 1 {
        if let Some(StrippedChild::Element(_)) = node.children.first() {
            if let Some(StrippedChild::Element(child)) = node.children.pop() {
                // The child was flattened already.
                return Some(child);
            }
        }
    }
    Some(node)
}
