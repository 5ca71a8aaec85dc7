//! Demo pages for the simulated browser.

use super::sim::{el, Effect, RouteSite, SimNode, SimPage};

fn item(i: usize) -> SimNode {
    el("li").attr("class", "item").text(&format!("Item {i}"))
}

pub fn spa_page() -> SimPage {
    SimPage::new("Catalog").with(el("h1").text("Catalog")).with(el("ul").id("items").children((1..=2).map(item))).with(
        el("button")
            .id("more")
            .text("Load more")
            .on_click(Effect::fetch(300, [Effect::append("items", (3..=5).map(item))])),
    )
}

pub fn slow_page() -> SimPage {
    SimPage::new("Live feed")
        .with(el("h1").text("Live feed"))
        .with(el("p").text("Waiting for updates"))
        .on_load(Effect::Hold { ms: Some(60_000) })
}

pub fn login_page() -> SimPage {
    SimPage::new("Sign in").with(
        el("form")
            .attr("action", "/welcome")
            .attr("method", "post")
            .child(el("input").attr("name", "username").attr("placeholder", "Username"))
            .child(el("input").attr("type", "password").attr("name", "password").attr("placeholder", "Password"))
            .child(el("button").attr("type", "submit").text("Login"))
            .child(el("div").style("display", "none").text("Invalid credentials")),
    )
}

pub fn menu_page() -> SimPage {
    SimPage::new("Menu").with(el("div").id("products").text("Products").on_hover(Effect::show("submenu"))).with(
        el("div")
            .id("submenu")
            .style("display", "none")
            .child(el("a").attr("href", "/static").text("Mugs"))
            .child(el("a").attr("href", "/static").text("Shirts")),
    )
}

pub fn search_page() -> SimPage {
    SimPage::new("Search").with(
        el("form")
            .attr("action", "/results")
            .child(el("input").attr("type", "search").attr("name", "q").attr("placeholder", "Search"))
            .child(el("button").attr("type", "submit").text("Go")),
    )
}

pub fn select_page() -> SimPage {
    SimPage::new("Options")
        .with(
            el("select")
                .attr("name", "color")
                .on_change(Effect::fetch(120, []))
                .child(el("option").attr("value", "red").text("Red"))
                .child(el("option").attr("value", "blue").text("Blue").selected())
                .child(el("option").attr("value", "green").text("Green")),
        )
        .with(el("textarea").attr("name", "notes").value("abcdef"))
        .with(el("input").attr("name", "sku").attr("readonly", "").value("X-1"))
}

pub fn long_page() -> SimPage {
    let mut p = SimPage::new("Long");
    for i in 0..80 {
        p = p.with(el("p").text(&format!("Paragraph {i}")));
    }
    p.with(
        el("button")
            .text("Bottom action")
            .on_click(Effect::fetch(50, [Effect::append("log", [el("p").text("Bottom clicked")])])),
    )
    .with(el("div").id("log"))
}

pub fn tabs_page() -> SimPage {
    SimPage::new("Tabs")
        .with(el("a").attr("href", "/static").attr("target", "_blank").text("Open details"))
        .with(el("a").attr("href", "/spa").text("Catalog"))
}

pub fn pointer_page() -> SimPage {
    SimPage::new("Pointer").with(el("div").style("cursor", "pointer").text("Card")).with(el("div").text("Plain"))
}

/// Every demo page, routed by path on any host.
pub fn demo_site() -> RouteSite {
    RouteSite::new()
        .page("/", SimPage::new("Home").with(el("a").attr("href", "/spa").text("Catalog")))
        .page(
            "/static",
            SimPage::new("Static").with(el("h1").text("Details")).with(el("p").text("Nothing moves here.")),
        )
        .page("/spa", spa_page())
        .page("/slow", slow_page())
        .page("/login", login_page())
        .page("/welcome", SimPage::new("Welcome").with(el("p").text("Signed in")))
        .page("/menu", menu_page())
        .page("/search", search_page())
        .route("/results", |url| {
            let q = url.query_pairs().find(|(k, _)| k == "q").map(|(_, v)| v.to_string()).unwrap_or_default();
            SimPage::new("Results").with(el("p").text(&format!("Results for {q}")))
        })
        .page("/select", select_page())
        .page("/long", long_page())
        .page("/tabs", tabs_page())
        .page("/pointer", pointer_page())
}
