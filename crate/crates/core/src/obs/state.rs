use super::filter::is_content_editable;
use super::interactive::is_disabled;
use super::{ControlState, InputStateRecord, RawNode, SelectStateRecord, SemanticId, StrippedNode};

/// `<input>` types that hold free text.
const TEXT_INPUT_TYPES: &[&str] = &["text", "search", "email", "password", "url", "tel", "number"];

/// Input types whose DOM exposes a text selection.
const SELECTABLE_INPUT_TYPES: &[&str] = &["text", "search", "password", "url", "tel"];

fn input_type(node: &RawNode) -> String {
    node.attr("type").map(|t| t.trim().to_ascii_lowercase()).filter(|t| !t.is_empty()).unwrap_or_else(|| "text".into())
}

/// Text inputs, textareas, and contenteditable regions.
pub fn is_text_bearing(node: &RawNode) -> bool {
    match node.tag.as_str() {
        "input" => TEXT_INPUT_TYPES.contains(&input_type(node).as_str()),
        "textarea" => true,
        _ => !node.is_text() && is_content_editable(node),
    }
}

fn text_content(node: &RawNode) -> String {
    let mut parts = Vec::new();
    node.walk(&mut |n| {
        if let Some(t) = &n.text {
            parts.push(t.as_str());
        }
    });
    parts.concat()
}

/// Reads the live state of a text-bearing control. The record's id is a
/// placeholder until ids are assigned.
pub fn capture_input_state(node: &RawNode) -> Option<InputStateRecord> {
    if !is_text_bearing(node) {
        return None;
    }
    let st = node.state.clone().unwrap_or_default();
    let (kind, value) = match node.tag.as_str() {
        "input" => {
            (input_type(node), st.value.clone().or_else(|| node.attr("value").map(String::from)).unwrap_or_default())
        }
        "textarea" => ("textarea".to_string(), st.value.clone().unwrap_or_else(|| text_content(node))),
        _ => ("contenteditable".to_string(), st.value.clone().unwrap_or_else(|| text_content(node).trim().to_string())),
    };
    let readonly = st.readonly.unwrap_or_else(|| node.has_attr("readonly"));
    let editable = !readonly && !is_disabled(node);
    let numeric_value =
        (kind == "number").then(|| value.trim().parse::<f64>().ok()).flatten().filter(|v| v.is_finite());
    let selectable = kind == "textarea" || kind == "contenteditable" || SELECTABLE_INPUT_TYPES.contains(&kind.as_str());
    let selection_range = if selectable {
        match (st.selection_start, st.selection_end) {
            (Some(s), Some(e)) => {
                let len = value.chars().count();
                let s = s.min(len);
                Some((s, e.clamp(s, len)))
            }
            _ => None,
        }
    } else {
        None
    };
    Some(InputStateRecord {
        semantic_id: SemanticId::pending(),
        input_type: kind,
        current_value: value,
        numeric_value,
        editable,
        selection_range,
        focused: st.focused,
    })
}

/// Reads a select's state from the raw element alone.
pub fn capture_select_state(node: &RawNode) -> Option<SelectStateRecord> {
    if node.tag != "select" {
        return None;
    }
    let stripped = match super::filter::strip(node, &super::FilterContext::default()) {
        Some(super::StrippedChild::Element(e)) => e,
        _ => return None,
    };
    match stripped.control {
        ControlState::Select(s) => Some(s),
        _ => None,
    }
}

/// Builds the select record from its already-stripped option children, so
/// every option in the record has a node in the serialized snapshot.
pub(crate) fn select_from_stripped(node: &RawNode, stripped: &StrippedNode) -> Option<SelectStateRecord> {
    let multiple = node.state.as_ref().and_then(|s| s.multiple).unwrap_or_else(|| node.has_attr("multiple"));
    let mut options = Vec::new();
    stripped.walk(&mut |n| {
        if let ControlState::Option { text, value, selected } = &n.control {
            options.push(super::OptionRecord {
                semantic_id: SemanticId::pending(),
                text: text.clone(),
                value: value.clone(),
                selected: *selected,
            });
        }
    });
    if !multiple {
        // A single select shows at most one selected option: the last one
        // marked wins, as in the browser.
        if let Some(last) = options.iter().rposition(|o| o.selected) {
            for (i, o) in options.iter_mut().enumerate() {
                o.selected = i == last;
            }
        }
    }
    let selected_index = options.iter().position(|o| o.selected).map(|i| i as i64).unwrap_or(-1);
    let current_value = options.iter().find(|o| o.selected).map(|o| o.value.clone()).unwrap_or_default();
    Some(SelectStateRecord { semantic_id: SemanticId::pending(), current_value, selected_index, multiple, options })
}
