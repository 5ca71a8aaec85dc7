use super::filter::{strip, FilterContext};
use super::flatten::prune_and_flatten;
use super::ids::{assign_semantic_ids, label_of};
use super::{
    ClickableEntry, ControlState, ObsError, ObservationDocument, RawDomSnapshot, SemanticId, StrippedChild,
    StrippedNode,
};

const MAX_LABEL_CHARS: usize = 100;

/// Pairs a live-DOM node handle with the id assigned to it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IdBinding {
    pub node_ref: u64,
    pub id: SemanticId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledObservation {
    pub document: ObservationDocument,
    pub tree: StrippedNode,
    /// Ids to write back onto the live page, for nodes that carried a ref.
    pub bindings: Vec<IdBinding>,
}

/// Compiles a snapshot into the agent-facing observation.
pub fn compile_observation(snapshot: &RawDomSnapshot) -> Result<ObservationDocument, ObsError> {
    compile_with_bindings(snapshot).map(|c| c.document)
}

pub fn compile_with_bindings(snapshot: &RawDomSnapshot) -> Result<CompiledObservation, ObsError> {
    snapshot.validate()?;
    let ctx = FilterContext::for_extent(snapshot.extent());
    let stripped = match strip(&snapshot.root, &ctx) {
        Some(StrippedChild::Element(e)) => e,
        // The root is an element by validation; if it is filtered away the
        // page has nothing visible.
        _ => StrippedNode::new(&snapshot.root.tag),
    };
    let tree = assign_semantic_ids(prune_and_flatten(stripped));

    let mut document = ObservationDocument {
        html: tree.to_html(),
        clickables: Vec::new(),
        hoverables: Vec::new(),
        inputs: Vec::new(),
        selects: Vec::new(),
        url: snapshot.url.clone(),
        title: String::new(),
    };
    let mut bindings = Vec::new();
    let mut title: Option<String> = None;
    let mut focus_taken = false;
    tree.walk(&mut |n| {
        if n.tag == "title" && title.is_none() {
            title = Some(n.visible_text());
        }
        let Some(id) = &n.semantic_id else { return };
        if let Some(r) = n.node_ref {
            bindings.push(IdBinding { node_ref: r, id: id.clone() });
        }
        if n.data_clickable {
            let mut label: String = label_of(n).chars().take(MAX_LABEL_CHARS).collect();
            if label.is_empty() {
                label = n.tag.clone();
            }
            document.clickables.push(ClickableEntry { id: id.clone(), label });
        }
        if n.data_maybe_hoverable {
            document.hoverables.push(id.clone());
        }
        match &n.control {
            ControlState::Input(rec) => {
                let mut rec = rec.clone();
                if rec.focused {
                    rec.focused = !focus_taken;
                    focus_taken = true;
                }
                document.inputs.push(rec);
            }
            ControlState::Select(rec) => document.selects.push(rec.clone()),
            _ => {}
        }
    });
    document.title = title.unwrap_or_default();
    Ok(CompiledObservation { document, tree, bindings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::{RawNode, RuntimeState};

    fn vis(tag: &str) -> RawNode {
        RawNode::element(tag).with_style("display", "block").with_box(0.0, 0.0, 100.0, 20.0)
    }

    fn page(body: Vec<RawNode>) -> RawDomSnapshot {
        let root = RawNode::element("html")
            .with_child(RawNode::element("head").with_child(RawNode::element("title").with_text("Fixture")))
            .with_child(vis("body").with_children(body));
        RawDomSnapshot::new("http://localhost/", root)
    }

    #[test]
    fn empty_body_gives_empty_lists() {
        let snap = RawDomSnapshot::new("about:blank", RawNode::element("html").with_child(vis("body")));
        let doc = compile_observation(&snap).unwrap();
        assert!(doc.clickables.is_empty() && doc.hoverables.is_empty());
        assert!(doc.inputs.is_empty() && doc.selects.is_empty());
        assert_eq!(doc.html, "<html><body></body></html>");
    }

    #[test]
    fn select_with_selected_blue() {
        let sel = vis("select")
            .with_attr("name", "color")
            .with_child(RawNode::element("option").with_attr("value", "red").with_text("Red"))
            .with_child(
                RawNode::element("option")
                    .with_attr("value", "blue")
                    .with_text("Blue")
                    .with_state(RuntimeState { selected: Some(true), ..Default::default() }),
            );
        let doc = compile_observation(&page(vec![sel])).unwrap();
        assert_eq!(doc.selects.len(), 1);
        let s = &doc.selects[0];
        assert_eq!(s.semantic_id, "color");
        assert_eq!(s.selected_index, 1);
        assert_eq!(s.options[1].semantic_id, "color-blue");
        assert_eq!(s.options[0].semantic_id, "color-red");
        assert_eq!(doc.title, "Fixture");
        assert!(doc.html.contains(r#"data-semantic-id="color-blue""#));
    }

    #[test]
    fn at_most_one_focused_input() {
        let focused = || vis("input").with_state(RuntimeState { focused: true, ..Default::default() });
        let doc = compile_observation(&page(vec![focused(), focused()])).unwrap();
        assert_eq!(doc.inputs.iter().filter(|i| i.focused).count(), 1);
    }

    #[test]
    fn bindings_follow_node_refs() {
        let b = vis("button").with_text("Go").with_ref(7);
        let c = compile_with_bindings(&page(vec![b])).unwrap();
        assert_eq!(c.bindings, vec![IdBinding { node_ref: 7, id: SemanticId::new("go").unwrap() }]);
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        let mut snap = page(vec![vis("div").with_style("opacity", "1.5")]);
        assert!(matches!(compile_observation(&snap), Err(ObsError::MalformedSnapshot { .. })));
        snap = page(vec![]);
        snap.schema = "raw-dom/0".into();
        assert!(compile_observation(&snap).is_err());
        let neg = page(vec![RawNode::element("div").with_box(0.0, 0.0, -1.0, 4.0)]);
        assert!(compile_observation(&neg).is_err());
    }
}
