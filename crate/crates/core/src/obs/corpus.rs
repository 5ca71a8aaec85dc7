//! Fixture pages and a hand-labelled clickability set.
//!
//! Every node a correct compiler must remove carries the token
//! [`HIDDEN_MARK`] somewhere in its subtree text or attributes, so absence of
//! the token from an observation is a complete exclusion check.

use super::{ListenerFlag, RawDomSnapshot, RawNode, RuntimeState, Size};

pub const HIDDEN_MARK: &str = "zzh-";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageKind {
    Static,
    Spa,
    Form,
    Select,
    HoverMenu,
    Media,
    Scroll,
}

#[derive(Debug, Clone)]
pub struct FixturePage {
    pub name: &'static str,
    pub kind: PageKind,
    pub snapshot: RawDomSnapshot,
}

#[derive(Debug, Clone)]
pub struct LabeledElement {
    pub name: String,
    pub node: RawNode,
    pub clickable: bool,
}

const VIEWPORT: Size = Size { width: 1280.0, height: 720.0 };

fn e(tag: &str) -> RawNode {
    RawNode::element(tag)
}

fn t(tag: &str, text: &str) -> RawNode {
    e(tag).with_text(text)
}

fn link(text: &str, href: &str) -> RawNode {
    t("a", text).with_attr("href", href)
}

fn button(text: &str) -> RawNode {
    t("button", text)
}

fn input(ty: &str, name: &str, placeholder: &str) -> RawNode {
    e("input").with_attr("type", ty).with_attr("name", name).with_attr("placeholder", placeholder)
}

fn value(v: &str) -> RuntimeState {
    RuntimeState { value: Some(v.into()), ..Default::default() }
}

fn option(text: &str, v: &str, selected: bool) -> RawNode {
    let mut o = t("option", text).with_attr("value", v);
    if selected {
        o = o.with_attr("selected", "").with_state(RuntimeState { selected: Some(true), ..Default::default() });
    }
    o
}

fn select(name: &str, opts: &[(&str, bool)]) -> RawNode {
    e("select").with_attr("name", name).with_children(opts.iter().map(|(o, s)| option(o, &o.to_lowercase(), *s)))
}

fn hid(token: &str) -> String {
    format!("{HIDDEN_MARK}{token}")
}

/// `display:none` block holding a marker.
fn none(token: &str) -> RawNode {
    t("div", &hid(token)).with_style("display", "none")
}

fn invisible(token: &str) -> RawNode {
    t("div", &hid(token)).with_style("visibility", "hidden")
}

fn transparent(token: &str) -> RawNode {
    t("span", &hid(token)).with_style("opacity", "0")
}

fn zero(tag: &str, token: &str) -> RawNode {
    t(tag, &hid(token)).with_box(40.0, 40.0, 0.0, 0.0)
}

fn offscreen(token: &str) -> RawNode {
    t("div", &hid(token)).with_box(-5000.0, 100.0, 300.0, 40.0)
}

fn head(title: &str, token: &str) -> RawNode {
    e("head").with_children([
        t("title", title),
        e("meta").with_attr("charset", "utf-8").with_attr("content", &hid(&format!("{token}-meta"))),
        t("script", &format!("window[\"{}\"]=1", hid(&format!("{token}-script")))),
        t("style", &format!(".{} {{ color: red }}", hid(&format!("{token}-style")))),
        e("link").with_attr("rel", "stylesheet").with_attr("href", &format!("/{}.css", hid(token))),
    ])
}

fn leaf_height(tag: &str) -> f64 {
    match tag {
        "input" | "button" | "select" | "textarea" => 32.0,
        "h1" => 40.0,
        _ => 24.0,
    }
}

/// Stacks elements without a box vertically; returns the height used.
fn layout(n: &mut RawNode, x: f64, y: f64, w: f64) -> f64 {
    if n.is_text() || n.tag == "head" {
        return 0.0;
    }
    if let Some(b) = n.bbox {
        let (bx, by, bw) = (b.x, b.y, b.width.max(1.0));
        let mut cy = by;
        for c in &mut n.children {
            cy += layout(c, bx, cy, bw);
        }
        return 0.0;
    }
    let inner_x = x + 8.0;
    let inner_w = (w - 16.0).max(1.0);
    let mut cy = y;
    let mut laid_child = false;
    for c in &mut n.children {
        if !c.is_text() {
            laid_child = true;
        }
        cy += layout(c, inner_x, cy, inner_w);
    }
    let h = if laid_child { (cy - y).max(1.0) } else { leaf_height(&n.tag) };
    n.bbox = Some(super::BoxRect::new(x, y, w, h));
    h
}

fn page(name: &'static str, kind: PageKind, title: &str, body: Vec<RawNode>) -> FixturePage {
    let mut body = e("body").with_children(body);
    let height = layout(&mut body, 0.0, 0.0, VIEWPORT.width);
    let root = e("html").with_child(head(title, name)).with_child(body);
    let mut snapshot = RawDomSnapshot::new(&format!("http://fixtures.local/{name}"), root);
    snapshot.viewport = VIEWPORT;
    snapshot.document = Some(Size { width: VIEWPORT.width, height: height.max(VIEWPORT.height) });
    FixturePage { name, kind, snapshot }
}

fn scroller(mut n: RawNode) -> RawNode {
    n.scrollable = true;
    n
}

fn hover(n: RawNode) -> RawNode {
    n.with_listener(ListenerFlag::HoverListener)
}

fn clicky(n: RawNode) -> RawNode {
    n.with_listener(ListenerFlag::ClickListener)
}

fn nav(items: &[&str]) -> RawNode {
    e("nav").with_child(
        e("ul").with_children(items.iter().map(|i| e("li").with_child(link(i, &format!("/{}", i.to_lowercase()))))),
    )
}

/// The fixture corpus: static pages, SPA screens, forms, selects, hover
/// menus, media-heavy and scrolling pages.
pub fn pages() -> Vec<FixturePage> {
    use PageKind::*;
    vec![
        page(
            "static-article",
            Static,
            "Article",
            vec![
                nav(&["Home", "Blog", "About"]),
                t("h1", "Understanding copy-on-write"),
                t("p", "Snapshots share blocks until one side writes."),
                e("img")
                    .with_attr("src", "/fig1.png")
                    .with_attr("alt", "Figure one")
                    .with_box(8.0, 200.0, 400.0, 200.0),
                t("p", "Clones are cheap in both time and space."),
                e("noscript").with_text(&hid("noscript")),
                link("Next article", "/next"),
            ],
        ),
        page(
            "static-docs",
            Static,
            "Docs",
            vec![
                e("div").with_child(e("div").with_child(e("div").with_child(t("h1", "API reference")))),
                t("pre", "GET /episodes"),
                e("template").with_child(t("p", &hid("template"))),
                e("ul").with_children(
                    (1..=5).map(|i| e("li").with_child(link(&format!("Section {i}"), &format!("#s{i}")))),
                ),
                t("p", "Anchors without href are plain text:").with_child(t("a", "top").with_attr("name", "top")),
            ],
        ),
        page(
            "news-list",
            Static,
            "News",
            vec![
                t("h1", "Headlines"),
                e("ol").with_children((1..=10).map(|i| {
                    e("li")
                        .with_child(link(&format!("Story {i}"), &format!("/story/{i}")))
                        .with_child(t("span", "2h ago"))
                })),
                transparent("sr-only"),
                zero("span", "pixel"),
            ],
        ),
        page(
            "spa-dashboard",
            Spa,
            "Dashboard",
            vec![
                t("h1", "Overview"),
                e("div").with_attr("class", "cards").with_children(["Revenue", "Orders", "Visitors"].map(|c| {
                    clicky(e("div").with_attr("class", "card")).with_child(t("h2", c)).with_child(t("p", "42"))
                })),
                t("span", "Refresh").with_attr("role", "button"),
                none("spinner"),
                t("div", "Export").with_style("cursor", "pointer"),
            ],
        ),
        page(
            "spa-todo",
            Spa,
            "Todos",
            vec![
                input("text", "new-todo", "What needs doing?").with_state(RuntimeState { focused: true, ..value("") }),
                button("Add"),
                e("ul").with_children(["Milk", "Eggs", "Bread"].map(|item| {
                    e("li")
                        .with_child(
                            e("input")
                                .with_attr("type", "checkbox")
                                .with_state(RuntimeState { checked: Some(item == "Eggs"), ..Default::default() }),
                        )
                        .with_child(t("span", item))
                        .with_child(button("Delete"))
                })),
                invisible("undo-toast"),
            ],
        ),
        page(
            "login-form",
            Form,
            "Sign in",
            vec![
                e("form").with_children([
                    t("label", "Email").with_attr("for", "email"),
                    input("email", "email", "you@example.com").with_attr("id", "email"),
                    t("label", "Password").with_attr("for", "password"),
                    input("password", "password", "Password").with_attr("id", "password"),
                    e("input")
                        .with_attr("type", "hidden")
                        .with_attr("name", "csrf")
                        .with_attr("value", &hid("csrf"))
                        .with_style("display", "none"),
                    e("label")
                        .with_child(e("input").with_attr("type", "checkbox").with_attr("name", "remember"))
                        .with_text("Remember me"),
                    button("Sign in").with_attr("type", "submit"),
                ]),
                link("Forgot password?", "/reset"),
            ],
        ),
        page(
            "signup-form",
            Form,
            "Create account",
            vec![
                t("h1", "Create account"),
                e("form").with_children([
                    input("text", "first", "First name"),
                    input("text", "last", "Last name"),
                    input("text", "plan", "Plan")
                        .with_attr("readonly", "")
                        .with_state(RuntimeState { readonly: Some(true), ..value("Free") }),
                    t("textarea", "").with_attr("name", "bio").with_attr("placeholder", "About you"),
                    button("Create").with_attr("disabled", ""),
                    button("Cancel").with_style("pointer-events", "none"),
                ]),
                offscreen("promo"),
            ],
        ),
        page(
            "search-results",
            Form,
            "Search",
            vec![
                e("form").with_attr("role", "search").with_children([
                    input("search", "q", "Search products").with_state(RuntimeState {
                        focused: true,
                        selection_start: Some(4),
                        selection_end: Some(4),
                        ..value("lamp")
                    }),
                    button("Search"),
                ]),
                e("div").with_children((1..=6).map(|i| {
                    e("article")
                        .with_child(link(&format!("Lamp model {i}"), &format!("/p/{i}")))
                        .with_child(t("p", "In stock"))
                })),
                e("nav").with_children([link("Previous", "?page=1"), link("Next", "?page=3")]),
            ],
        ),
        page(
            "select-shipping",
            Select,
            "Shipping",
            vec![
                t("label", "Speed"),
                select("speed", &[("Standard", false), ("Express", true), ("Overnight", false)]),
                t("label", "Extras"),
                select("extras", &[("Gift wrap", true), ("Insurance", true), ("Signature", false)])
                    .with_attr("multiple", "")
                    .with_state(RuntimeState { multiple: Some(true), ..Default::default() }),
                button("Continue"),
            ],
        ),
        page(
            "select-country",
            Select,
            "Country",
            vec![
                select(
                    "country",
                    &[
                        ("Austria", false),
                        ("Belgium", false),
                        ("Canada", false),
                        ("Denmark", true),
                        ("Estonia", false),
                        ("Finland", false),
                        ("Greece", false),
                    ],
                ),
                select("region", &[("North", false), ("South", false)]).with_attr("disabled", ""),
                none("region-help"),
            ],
        ),
        page(
            "hover-menu",
            HoverMenu,
            "Menu",
            vec![
                e("nav").with_child(e("ul").with_children(["Products", "Solutions", "Pricing"].map(|m| {
                    hover(e("li")).with_child(t("span", m)).with_child(
                        e("ul")
                            .with_style("display", "none")
                            .with_child(e("li").with_child(link(&hid(&format!("{m}-sub")), "/sub"))),
                    )
                }))),
                t("p", "Hover a menu to see more."),
            ],
        ),
        page(
            "hover-cards",
            HoverMenu,
            "Team",
            vec![
                e("div").with_children(["Ada", "Grace", "Linus"].map(|n| {
                    e("div")
                        .with_attr("data-maybe-hoverable", "true")
                        .with_child(t("h3", n))
                        .with_child(t("div", &hid(&format!("{n}-tooltip"))).with_style("visibility", "hidden"))
                })),
                hover(t("span", "Info")).with_attr("aria-label", "More info"),
            ],
        ),
        page(
            "modal-open",
            Spa,
            "Modal",
            vec![
                t("main", "Background content"),
                e("div").with_attr("role", "dialog").with_attr("aria-modal", "true").with_children([
                    t("h2", "Confirm delete"),
                    button("Delete"),
                    button("Keep"),
                ]),
                e("div")
                    .with_attr("role", "dialog")
                    .with_style("display", "none")
                    .with_child(button(&hid("closed-modal"))),
            ],
        ),
        page(
            "table-data",
            Static,
            "Orders",
            vec![e("table").with_children([
                e("thead").with_child(
                    e("tr")
                        .with_children(["Order", "Date", "Total"].map(|h| t("th", h).with_style("cursor", "pointer"))),
                ),
                e("tbody").with_children((1..=4).map(|i| {
                    e("tr").with_attr("onclick", &format!("open({i})")).with_children([
                        t("td", &format!("#{i}00")),
                        t("td", "2024-05-0{i}"),
                        t("td", "$12.00"),
                    ])
                })),
            ])],
        ),
        page(
            "media-page",
            Media,
            "Media",
            vec![
                t("h1", "Launch video"),
                e("video").with_attr("src", "/launch.mp4").with_child(t("p", &hid("video-fallback"))),
                e("audio").with_attr("src", "/theme.mp3").with_child(t("p", &hid("audio-fallback"))),
                e("canvas").with_child(t("p", &hid("canvas-fallback"))),
                e("iframe").with_attr("src", "/embed").with_attr("title", &hid("iframe")),
                t("p", "Transcript available below."),
                link("Transcript", "/transcript"),
            ],
        ),
        page(
            "long-scroll",
            Scroll,
            "Feed",
            vec![
                e("div").with_children((1..=30).map(|i| {
                    e("article")
                        .with_child(t("h3", &format!("Post {i}")))
                        .with_child(link("Read", &format!("/post/{i}")))
                })),
                t("div", &hid("beyond-extent")).with_box(0.0, 90_000.0, 300.0, 40.0),
                scroller(e("div")).with_attr("class", "carousel").with_box(8.0, 20.0, 600.0, 120.0).with_children(
                    (1..=3).map(|i| {
                        t("div", &format!("Slide {i}")).with_box(2000.0 + 600.0 * i as f64, 20.0, 600.0, 120.0)
                    }),
                ),
            ],
        ),
        page(
            "zero-size-traps",
            Static,
            "Traps",
            vec![
                t("p", "Visible paragraph"),
                zero("div", "zero-div"),
                e("img").with_attr("src", "/t.gif").with_attr("alt", &hid("tracking")).with_box(0.0, 0.0, 0.0, 0.0),
                t("span", "Thin but visible").with_box(8.0, 300.0, 0.0, 18.0),
                zero("button", "zero-button"),
                transparent("ghost"),
            ],
        ),
        page(
            "nested-wrappers",
            Static,
            "Wrappers",
            vec![
                e("div").with_child(
                    e("div").with_child(
                        e("div").with_child(e("div").with_child(e("span").with_child(button("Deep action")))),
                    ),
                ),
                e("div").with_child(e("div")),
                e("div").with_children([t("span", "Left"), t("span", "Right")]),
            ],
        ),
        page(
            "contenteditable-editor",
            Form,
            "Editor",
            vec![
                e("div").with_attr("role", "toolbar").with_children([button("Bold"), button("Italic"), button("Link")]),
                t("div", "Draft text")
                    .with_attr("contenteditable", "true")
                    .with_attr("aria-label", "Body")
                    .with_state(RuntimeState { content_editable: true, ..Default::default() }),
                none("autosave"),
            ],
        ),
        page(
            "shop-product",
            Form,
            "Lamp",
            vec![
                t("h1", "Desk lamp"),
                e("img").with_attr("src", "/lamp.jpg").with_attr("alt", "Desk lamp").with_box(8.0, 60.0, 320.0, 240.0),
                t("label", "Size"),
                select("size", &[("Small", true), ("Large", false)]),
                input("number", "qty", "Quantity").with_state(value("1")),
                button("Add to cart"),
                e("section").with_children([
                    t("h2", "Reviews"),
                    t("p", "Bright and sturdy."),
                    button("Helpful"),
                    t("p", "Great value."),
                    button("Helpful"),
                ]),
            ],
        ),
        page(
            "checkout",
            Form,
            "Checkout",
            vec![
                e("fieldset").with_children([
                    t("legend", "Payment"),
                    e("label")
                        .with_child(
                            e("input")
                                .with_attr("type", "radio")
                                .with_attr("name", "pay")
                                .with_attr("value", "card")
                                .with_state(RuntimeState { checked: Some(true), ..Default::default() }),
                        )
                        .with_text("Card"),
                    e("label")
                        .with_child(
                            e("input")
                                .with_attr("type", "radio")
                                .with_attr("name", "pay")
                                .with_attr("value", "invoice"),
                        )
                        .with_text("Invoice"),
                ]),
                input("text", "street", "Street"),
                input("text", "city", "City"),
                e("details").with_child(t("summary", "Order summary")).with_child(t("p", "3 items")),
                button("Place order"),
            ],
        ),
        page(
            "settings-tabs",
            Spa,
            "Settings",
            vec![
                e("div")
                    .with_attr("role", "tablist")
                    .with_children(["General", "Privacy", "Billing"].map(|s| t("div", s).with_attr("role", "tab"))),
                t("span", "Dark mode").with_attr("role", "switch"),
                t("a", "Help").with_attr("role", "link"),
                clicky(t("div", "Save")),
                t("div", &hid("billing-panel")).with_attr("role", "tabpanel").with_style("display", "none"),
            ],
        ),
    ]
}

/// Elements labelled by hand against the clickability rules: native
/// controls, anchors with href, onclick handlers, button/link roles, and
/// pointer cursors, minus disabled or pointer-events:none elements.
pub fn labeled_elements() -> Vec<LabeledElement> {
    let mut out = Vec::new();
    let mut add =
        |name: &str, node: RawNode, clickable: bool| out.push(LabeledElement { name: name.into(), node, clickable });

    for tag in ["button", "input", "select", "summary", "area"] {
        add(&format!("{tag} plain"), e(tag), true);
        add(&format!("{tag} disabled"), e(tag).with_attr("disabled", ""), false);
        add(&format!("{tag} disabled=false text"), e(tag).with_attr("disabled", "false"), false);
        add(&format!("{tag} pointer-events none"), e(tag).with_style("pointer-events", "none"), false);
        add(&format!("{tag} pointer-events auto"), e(tag).with_style("pointer-events", "auto"), true);
        add(&format!("{tag} cursor default"), e(tag).with_style("cursor", "default"), true);
    }
    add("input type=checkbox", e("input").with_attr("type", "checkbox"), true);
    add("input type=radio", e("input").with_attr("type", "radio"), true);
    add("input type=submit", e("input").with_attr("type", "submit"), true);
    add("input readonly", e("input").with_attr("readonly", ""), true);

    add("a with href", e("a").with_attr("href", "/x"), true);
    add("a with empty href", e("a").with_attr("href", ""), true);
    add("a with hash href", e("a").with_attr("href", "#"), true);
    add("a without href", e("a"), false);
    add("a with name only", e("a").with_attr("name", "top"), false);
    add("a href disabled", e("a").with_attr("href", "/x").with_attr("disabled", ""), false);
    add("a href pointer-events none", e("a").with_attr("href", "/x").with_style("pointer-events", "none"), false);
    add("a without href but pointer", e("a").with_style("cursor", "pointer"), true);

    for tag in ["div", "span", "li", "td", "img", "p", "tr", "h2", "label", "section"] {
        add(&format!("{tag} plain"), e(tag), false);
        add(&format!("{tag} onclick"), e(tag).with_attr("onclick", "go()"), true);
        add(&format!("{tag} click listener"), e(tag).with_listener(ListenerFlag::ClickListener), true);
        add(&format!("{tag} cursor pointer"), e(tag).with_style("cursor", "pointer"), true);
        add(&format!("{tag} cursor text"), e(tag).with_style("cursor", "text"), false);
        add(&format!("{tag} hover listener only"), e(tag).with_listener(ListenerFlag::HoverListener), false);
    }

    add("span role=button", e("span").with_attr("role", "button"), true);
    add("div role=link", e("div").with_attr("role", "link"), true);
    add("div role=BUTTON", e("div").with_attr("role", "BUTTON"), true);
    add("div role=' link '", e("div").with_attr("role", " link "), true);
    add("div role=tab", e("div").with_attr("role", "tab"), false);
    add("div role=menuitem", e("div").with_attr("role", "menuitem"), false);
    add("div role=switch", e("div").with_attr("role", "switch"), false);
    add("div role=checkbox", e("div").with_attr("role", "checkbox"), false);
    add("div role=presentation", e("div").with_attr("role", "presentation"), false);
    add("span role=button disabled", e("span").with_attr("role", "button").with_attr("disabled", ""), false);
    add(
        "div role=link pointer-events none",
        e("div").with_attr("role", "link").with_style("pointer-events", "none"),
        false,
    );

    add("div onclick disabled", e("div").with_attr("onclick", "x()").with_attr("disabled", ""), false);
    add(
        "div listener pointer-events none",
        e("div").with_listener(ListenerFlag::ClickListener).with_style("pointer-events", "none"),
        false,
    );
    add("div cursor pointer disabled", e("div").with_style("cursor", "pointer").with_attr("disabled", ""), false);
    add("div cursor ' pointer '", e("div").with_style("cursor", " pointer "), true);
    add("div cursor grab", e("div").with_style("cursor", "grab"), false);
    add("div data-clickable stale", e("div").with_attr("data-clickable", "true"), false);
    add("div tabindex only", e("div").with_attr("tabindex", "0"), false);
    add("textarea", e("textarea"), false);
    add("textarea cursor pointer", e("textarea").with_style("cursor", "pointer"), true);
    add("option", e("option"), false);
    add("details", e("details"), false);
    add("label for", e("label").with_attr("for", "x"), false);
    add("form", e("form"), false);
    add("nav", e("nav"), false);
    out
}
