use std::collections::HashSet;

use webenv_core::obs::corpus::{labeled_elements, pages, HIDDEN_MARK};
use webenv_core::obs::{detect_clickable, EXCLUDED_TAGS};
use webenv_core::{compile_observation, ObservationDocument};

fn semantic_ids(html: &str) -> Vec<&str> {
    html.split("data-semantic-id=\"").skip(1).map(|s| &s[..s.find('"').unwrap()]).collect()
}

fn compile(name: &str) -> ObservationDocument {
    let p = pages().into_iter().find(|p| p.name == name).unwrap();
    compile_observation(&p.snapshot).unwrap()
}

#[test]
fn nothing_hidden_survives() {
    for p in pages() {
        let obs = compile_observation(&p.snapshot).unwrap();
        let json = obs.to_json();
        assert!(!json.contains(HIDDEN_MARK), "{}: {}", p.name, obs.html);
        for tag in EXCLUDED_TAGS {
            assert!(!obs.html.contains(&format!("<{tag}")), "{} kept <{tag}>", p.name);
        }
    }
}

#[test]
fn semantic_ids_are_unique_and_listed() {
    for p in pages() {
        let obs = compile_observation(&p.snapshot).unwrap();
        let ids = semantic_ids(&obs.html);
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len(), "{}: {ids:?}", p.name);
        for c in &obs.clickables {
            assert!(unique.contains(&c.id.as_str()), "{}: {} missing from html", p.name, c.id);
        }
    }
}

#[test]
fn compilation_is_deterministic() {
    for p in pages() {
        let runs: Vec<String> = (0..3).map(|_| compile_observation(&p.snapshot).unwrap().to_json()).collect();
        assert!(runs.windows(2).all(|w| w[0] == w[1]), "{}", p.name);
    }
}

#[test]
fn visible_content_is_kept() {
    let carousel = compile("long-scroll");
    assert!(carousel.html.contains("Slide 3"), "children of a scroll container survive");
    assert!(carousel.html.contains("Post 30"));
    let traps = compile("zero-size-traps");
    assert!(traps.html.contains("Thin but visible"));
    let wrappers = compile("nested-wrappers");
    assert!(wrappers.clickables.iter().any(|c| c.label == "Deep action"));
    assert!(!wrappers.html.contains("<div><div>"), "{}", wrappers.html);
    let media = compile("media-page");
    assert!(media.html.contains("Transcript available below."));
}

#[test]
fn observation_components_per_kind() {
    let todo = compile("spa-todo");
    assert_eq!(todo.inputs.iter().filter(|i| i.focused).count(), 1);
    let deletes = todo.clickables.iter().filter(|c| c.label == "Delete").count();
    assert_eq!(deletes, 3);

    let shipping = compile("select-shipping");
    assert_eq!(shipping.selects.len(), 2);
    assert!(shipping.selects.iter().all(|s| !s.options.is_empty()));

    let menu = compile("hover-menu");
    assert_eq!(menu.hoverables.len(), 3);
    let cards = compile("hover-cards");
    assert_eq!(cards.hoverables.len(), 4);

    let signup = compile("signup-form");
    assert!(!signup.clickables.iter().any(|c| c.label == "Create" || c.label == "Cancel"));
    assert!(signup.inputs.iter().any(|i| !i.editable));
}

#[test]
fn labeled_interactivity_agrees() {
    let set = labeled_elements();
    assert!(set.len() >= 100);
    let wrong: Vec<_> =
        set.iter().filter(|l| detect_clickable(&l.node) != l.clickable).map(|l| l.name.as_str()).collect();
    assert!(wrong.is_empty(), "{wrong:?}");
}
