use std::collections::HashSet;

use scraper::{Html, Selector};
use url::Url;

/// Absolute http(s) targets of `<a href>` elements, in document order,
/// first occurrence kept. Fragment-only references are ignored.
pub fn scrape_links(html: &str, base_url: &Url) -> Vec<Url> {
    let doc = Html::parse_document(html);
    let anchors = Selector::parse("a[href]").expect("static selector");
    let base = Selector::parse("base[href]").expect("static selector");
    let base_url = doc
        .select(&base)
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|h| base_url.join(h.trim()).ok())
        .unwrap_or_else(|| base_url.clone());

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in doc.select(&anchors) {
        let href = a.value().attr("href").unwrap_or("").trim();
        if href.is_empty() || href.starts_with('#') {
            continue;
        }
        let Ok(url) = base_url.join(href) else { continue };
        if !matches!(url.scheme(), "http" | "https") {
            continue;
        }
        if seen.insert(url.as_str().to_string()) {
            out.push(url);
        }
    }
    out
}
