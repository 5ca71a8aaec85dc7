use std::collections::BTreeMap;

use super::{ListenerFlag, ObsError, RawNode, StrippedChild, StrippedNode};

const VOID_TAGS: &[&str] =
    &["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"];

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn write_open<'a>(tag: &str, attrs: impl Iterator<Item = (&'a str, &'a str)>, out: &mut String) {
    out.push('<');
    out.push_str(tag);
    for (k, v) in attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape_attr(v, out);
        out.push('"');
    }
    out.push('>');
}

/// Attributes as emitted: retained ones plus compiler annotations, sorted.
pub(crate) fn emitted_attributes(node: &StrippedNode) -> BTreeMap<&str, &str> {
    let mut attrs: BTreeMap<&str, &str> =
        node.retained_attributes.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if let Some(id) = &node.semantic_id {
        attrs.insert("data-semantic-id", id.as_str());
    }
    if node.data_clickable {
        attrs.insert("data-clickable", "true");
    }
    if node.data_maybe_hoverable {
        attrs.insert("data-maybe-hoverable", "true");
    }
    if node.content_editable {
        attrs.insert("data-contenteditable", "true");
    }
    attrs
}

pub(crate) fn write_stripped(node: &StrippedNode, out: &mut String) {
    write_open(&node.tag, emitted_attributes(node).into_iter(), out);
    if VOID_TAGS.contains(&node.tag.as_str()) {
        return;
    }
    for c in &node.children {
        match c {
            StrippedChild::Text(t) => escape_text(t, out),
            StrippedChild::Element(e) => write_stripped(e, out),
        }
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push('>');
}

/// Outer HTML of a raw tree with every attribute, in collection order. Used
/// as the size baseline the stripped snapshot is compared against.
pub fn raw_outer_html(node: &RawNode) -> String {
    let mut out = String::new();
    write_raw(node, &mut out);
    out
}

fn write_raw(node: &RawNode, out: &mut String) {
    if node.is_text() {
        escape_text(node.text.as_deref().unwrap_or(""), out);
        return;
    }
    write_open(&node.tag, node.attributes.iter().map(|(k, v)| (k.as_str(), v.as_str())), out);
    if VOID_TAGS.contains(&node.tag.as_str()) {
        return;
    }
    if let Some(t) = &node.text {
        escape_text(t, out);
    }
    for c in &node.children {
        write_raw(c, out);
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push('>');
}

/// Parses a stripped snapshot back into a raw tree.
///
/// Only the serializer's own output is supported. The annotations are taken
/// as authoritative: an element is clickable exactly when it carries
/// `data-clickable="true"`, so recompiling reproduces the same interactive
/// set without style or geometry information.
pub fn parse_stripped_html(html: &str) -> Result<RawNode, ObsError> {
    let mut p = Parser { src: html, pos: 0 };
    let root = p.element()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing content after root element"));
    }
    Ok(root)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: &str) -> ObsError {
        ObsError::MalformedSnapshot { path: format!("html@{}", self.pos), reason: reason.to_string() }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn expect(&mut self, s: &str) -> Result<(), ObsError> {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err(self.err(&format!("expected {s:?}")))
        }
    }

    fn name(&mut self) -> Result<String, ObsError> {
        let end = self
            .rest()
            .find(|c: char| c.is_whitespace() || c == '>' || c == '=' || c == '/')
            .unwrap_or(self.rest().len());
        if end == 0 {
            return Err(self.err("expected a name"));
        }
        let n = self.rest()[..end].to_string();
        self.pos += end;
        Ok(n)
    }

    fn element(&mut self) -> Result<RawNode, ObsError> {
        self.expect("<")?;
        let tag = self.name()?;
        let mut node = RawNode::element(&tag);
        loop {
            self.skip_ws();
            if self.rest().starts_with('>') {
                self.pos += 1;
                break;
            }
            let k = self.name()?;
            self.expect("=\"")?;
            let end = self.rest().find('"').ok_or_else(|| self.err("unterminated attribute"))?;
            let v = unescape(&self.rest()[..end]);
            self.pos += end + 1;
            node.attributes.insert(k, v);
        }
        if node.attributes.shift_remove("data-clickable").as_deref() == Some("true") {
            node.listener_flags.insert(ListenerFlag::ClickListener);
        } else if super::detect_clickable(&node) {
            // A native control without the annotation was disabled at
            // compile time.
            node.computed_style.insert("pointer-events".into(), "none".into());
        }
        if VOID_TAGS.contains(&tag.as_str()) {
            return Ok(node);
        }
        loop {
            if self.rest().starts_with("</") {
                self.pos += 2;
                let close = self.name()?;
                if close != tag {
                    return Err(self.err(&format!("mismatched </{close}> for <{tag}>")));
                }
                self.expect(">")?;
                return Ok(node);
            }
            if self.rest().starts_with('<') {
                let child = self.element()?;
                node.children.push(child);
            } else {
                let end = self.rest().find('<').ok_or_else(|| self.err("unclosed element"))?;
                node.children.push(RawNode::text_node(&unescape(&self.rest()[..end])));
                self.pos += end;
            }
        }
    }
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&amp;", "&")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attributes_are_sorted_and_escaped() {
        let mut n = StrippedNode::new("a");
        n.retained_attributes.insert("title".into(), "a \"b\" & <c>".into());
        n.retained_attributes.insert("href".into(), "/x?a=1&b=2".into());
        n.data_clickable = true;
        n.children.push(StrippedChild::Text("1 < 2".into()));
        assert_eq!(
            n.to_html(),
            r#"<a data-clickable="true" href="/x?a=1&amp;b=2" title="a &quot;b&quot; &amp; &lt;c&gt;">1 &lt; 2</a>"#
        );
    }

    #[test]
    fn void_elements_have_no_close_tag() {
        let mut n = StrippedNode::new("p");
        n.children.push(StrippedChild::Element(StrippedNode::new("input")));
        assert_eq!(n.to_html(), "<p><input></p>");
    }

    #[test]
    fn parse_back() {
        let html =
            r#"<html><body><a data-clickable="true" href="/x?a=1&amp;b=2">x &lt; y</a><input value="q"></body></html>"#;
        let root = parse_stripped_html(html).unwrap();
        let a = root.find(&|n| n.tag == "a").unwrap();
        assert_eq!(a.attr("href"), Some("/x?a=1&b=2"));
        assert!(a.listener_flags.contains(&ListenerFlag::ClickListener));
        assert_eq!(a.children[0].text.as_deref(), Some("x < y"));
        let input = root.find(&|n| n.tag == "input").unwrap();
        assert_eq!(input.style("pointer-events"), Some("none"));
        assert_eq!(root.find(&|n| n.tag == "body").unwrap().style("pointer-events"), None);
        assert!(parse_stripped_html("<p><b></p>").is_err());
    }
}
