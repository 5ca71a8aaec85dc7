use std::collections::{HashMap, HashSet};

use super::{ControlState, SemanticId, StrippedChild, StrippedNode};

pub const MAX_SLUG_LEN: usize = 32;
pub const MAX_SEMANTIC_ID_LEN: usize = 64;

/// Cuts `s` to at most `max` bytes, preferring to end at a hyphen. Input is
/// ASCII by construction.
fn fit(s: &str, max: usize) -> String {
    let s = s.trim_matches('-');
    if s.len() <= max {
        return s.to_string();
    }
    let head = &s[..max];
    let cut = if s.as_bytes()[max] == b'-' {
        head
    } else {
        match head.rfind('-') {
            Some(p) if p > 0 => &head[..p],
            _ => head,
        }
    };
    cut.trim_end_matches('-').to_string()
}

fn slug_core(label: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for c in label.chars() {
        if !c.is_ascii() {
            // Non-ASCII code points vanish without acting as separators.
            continue;
        }
        if c.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('-');
            }
            gap = false;
            out.push(c.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    fit(&out, MAX_SLUG_LEN)
}

/// Normalizes a label to a short ASCII slug, falling back to the tag name.
pub fn slugify(label: &str, tag: &str) -> String {
    let s = slug_core(label);
    if !s.is_empty() {
        return s;
    }
    let t = slug_core(tag);
    if t.is_empty() {
        "element".to_string()
    } else {
        t
    }
}

fn is_form_field(node: &StrippedNode) -> bool {
    matches!(node.tag.as_str(), "input" | "select" | "textarea") || node.content_editable
}

fn first_img_alt(node: &StrippedNode) -> Option<String> {
    let mut found = None;
    node.walk(&mut |n| {
        if found.is_none() && n.tag == "img" {
            if let Some(alt) = n.retained_attributes.get("alt").filter(|a| !a.trim().is_empty()) {
                found = Some(alt.clone());
            }
        }
    });
    found
}

/// Human-facing label of an interactive element.
pub(crate) fn label_of(node: &StrippedNode) -> String {
    let attr =
        |name: &str| node.retained_attributes.get(name).map(|v| v.trim()).filter(|v| !v.is_empty()).map(String::from);
    let form_field = is_form_field(node);
    if !form_field {
        let text = node.visible_text();
        if !text.is_empty() {
            return text;
        }
    }
    if node.tag == "input" {
        let kind = node.retained_attributes.get("type").map(|t| t.to_ascii_lowercase());
        if matches!(kind.as_deref(), Some("submit" | "button" | "reset")) {
            if let Some(v) = attr("value") {
                return v;
            }
        }
    }
    attr("placeholder")
        .or_else(|| attr("aria-label"))
        .or_else(|| attr("alt"))
        .or_else(|| if form_field { None } else { first_img_alt(node) })
        .or_else(|| if form_field { attr("name") } else { None })
        .or_else(|| attr("title"))
        .unwrap_or_default()
}

fn ancestor_name(node: &StrippedNode) -> Option<String> {
    ["aria-label", "name", "id"]
        .iter()
        .filter_map(|a| node.retained_attributes.get(*a))
        .map(|v| slug_core(v))
        .find(|s| !s.is_empty())
}

struct Target {
    base: String,
    scope: Option<String>,
}

fn collect(node: &StrippedNode, scope: Option<&str>, out: &mut Vec<Target>) {
    let own_name = ancestor_name(node);
    if node.is_interactive() && !matches!(node.control, ControlState::Option { .. }) {
        out.push(Target { base: slugify(&label_of(node), &node.tag), scope: scope.map(String::from) });
    }
    let child_scope = own_name.as_deref().or(scope);
    for c in node.element_children() {
        collect(c, child_scope, out);
    }
}

struct Allocator {
    used: HashSet<String>,
    reserved: HashSet<String>,
}

impl Allocator {
    fn claim(&mut self, candidate: &str, first_of_group: bool) -> String {
        let candidate = fit(candidate, MAX_SEMANTIC_ID_LEN);
        if (first_of_group || !self.reserved.contains(&candidate)) && !self.used.contains(&candidate) {
            self.used.insert(candidate.clone());
            return candidate;
        }
        let mut k = 2usize;
        loop {
            let suffix = format!("-{k}");
            let id = format!("{}{}", fit(&candidate, MAX_SEMANTIC_ID_LEN - suffix.len()), suffix);
            if !self.used.contains(&id) && !self.reserved.contains(&id) {
                self.used.insert(id.clone());
                return id;
            }
            k += 1;
        }
    }
}

/// Gives every interactive element, input, select, and option a unique id.
///
/// Ids start as the bare slug of the element's label. Slugs shared by several
/// elements are scoped under the nearest named ancestor; whatever still
/// collides is numbered `-2`, `-3`, … in document order. Option ids are
/// namespaced under their select.
pub fn assign_semantic_ids(mut tree: StrippedNode) -> StrippedNode {
    let mut targets = Vec::new();
    collect(&tree, None, &mut targets);

    let mut base_counts: HashMap<&str, usize> = HashMap::new();
    for t in &targets {
        *base_counts.entry(t.base.as_str()).or_default() += 1;
    }
    let candidates: Vec<String> = targets
        .iter()
        .map(|t| match (&t.scope, base_counts[t.base.as_str()] > 1) {
            (Some(scope), true) => fit(&format!("{scope}-{}", t.base), MAX_SEMANTIC_ID_LEN),
            _ => fit(&t.base, MAX_SEMANTIC_ID_LEN),
        })
        .collect();
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for c in &candidates {
        *cand_counts.entry(c.as_str()).or_default() += 1;
    }
    let reserved = cand_counts.iter().filter(|(_, n)| **n == 1).map(|(c, _)| c.to_string()).collect();
    let mut alloc = Allocator { used: HashSet::new(), reserved };
    let mut seen_groups: HashSet<String> = HashSet::new();

    let mut next = 0usize;
    apply(&mut tree, &candidates, &mut next, &mut alloc, &mut seen_groups);
    debug_assert_eq!(next, candidates.len());
    tree
}

fn apply(
    node: &mut StrippedNode,
    candidates: &[String],
    next: &mut usize,
    alloc: &mut Allocator,
    seen: &mut HashSet<String>,
) {
    if node.is_interactive() && !matches!(node.control, ControlState::Option { .. }) {
        let cand = &candidates[*next];
        *next += 1;
        let first = seen.insert(cand.clone());
        let id = alloc.claim(cand, first);
        let sid = SemanticId::from_trusted(id);
        match &mut node.control {
            ControlState::Input(rec) => rec.semantic_id = sid.clone(),
            ControlState::Select(rec) => {
                rec.semantic_id = sid.clone();
                let mut option_ids = Vec::new();
                assign_options(node_children_mut(&mut node.children), sid.as_str(), alloc, &mut option_ids);
                if let ControlState::Select(rec) = &mut node.control {
                    for (o, id) in rec.options.iter_mut().zip(option_ids) {
                        o.semantic_id = id;
                    }
                }
            }
            _ => {}
        }
        node.semantic_id = Some(sid);
    }
    for c in &mut node.children {
        if let StrippedChild::Element(e) = c {
            apply(e, candidates, next, alloc, seen);
        }
    }
}

fn node_children_mut(children: &mut [StrippedChild]) -> impl Iterator<Item = &mut StrippedNode> {
    children.iter_mut().filter_map(|c| match c {
        StrippedChild::Element(e) => Some(e),
        StrippedChild::Text(_) => None,
    })
}

fn assign_options<'a>(
    nodes: impl Iterator<Item = &'a mut StrippedNode>,
    select_id: &str,
    alloc: &mut Allocator,
    out: &mut Vec<SemanticId>,
) {
    for n in nodes {
        if let ControlState::Option { text, value, .. } = &n.control {
            let label = if !text.is_empty() { text.as_str() } else { value.as_str() };
            let slug = slugify(label, "option");
            let id = alloc.claim(&format!("{select_id}-{slug}"), true);
            let sid = SemanticId::from_trusted(id);
            n.semantic_id = Some(sid.clone());
            out.push(sid);
        } else {
            assign_options(node_children_mut(&mut n.children), select_id, alloc, out);
        }
    }
}
