//! Paragraph-level segmentation of policy pages into terms.

use std::sync::LazyLock;

use regex::Regex;
use scraper::{Html, Node};
use url::Url;

use crate::store::{collapse_whitespace, TermRecord};

/// Fragments shorter than this (in characters) that do not end a sentence are
/// merged into a neighbour.
pub const MERGE_THRESHOLD: usize = 25;

const SKIPPED: &[&str] = &[
    "script", "style", "nav", "footer", "header", "noscript", "template", "head", "svg", "iframe",
    "object", "select", "button",
];

const BLOCKS: &[&str] = &[
    "p", "div", "li", "ul", "ol", "dl", "dt", "dd", "h1", "h2", "h3", "h4", "h5", "h6", "td", "th",
    "tr", "table", "thead", "tbody", "tfoot", "caption", "section", "article", "main", "aside",
    "blockquote", "pre", "address", "figure", "figcaption", "form", "fieldset", "hr", "br", "body",
    "center", "details", "summary",
];

static TAG_LEAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[A-Za-z/!][^>]*>").unwrap());

/// Split markup into ordered, whitespace-normalized paragraph fragments with
/// short fragments merged forward (or backward at the end of the document).
pub fn segment(html: &str) -> Vec<String> {
    let doc = Html::parse_document(html);
    let mut raw = Vec::new();
    let mut current = String::new();
    walk(doc.tree.root(), &mut current, &mut raw);
    flush(&mut current, &mut raw);
    merge_short(raw)
}

/// Extract the terms of one page. Empty when the page has no text.
pub fn extract_terms(html: &str, website_url: &Url, page_url: &Url) -> Vec<TermRecord> {
    segment(html)
        .into_iter()
        .enumerate()
        .map(|(i, text)| TermRecord::new(website_url.clone(), page_url.clone(), i as u32, text))
        .collect()
}

/// Visible text of a page, with the same boilerplate removal as segmentation.
pub fn visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut raw = Vec::new();
    let mut current = String::new();
    walk(doc.tree.root(), &mut current, &mut raw);
    flush(&mut current, &mut raw);
    raw.join(" ")
}

fn walk(node: ego_tree::NodeRef<'_, Node>, current: &mut String, out: &mut Vec<String>) {
    match node.value() {
        Node::Text(t) => current.push_str(t),
        Node::Element(e) => {
            let name = e.name();
            if SKIPPED.contains(&name) {
                return;
            }
            let block = BLOCKS.contains(&name);
            if block {
                flush(current, out);
            } else {
                // inline elements still separate words, e.g. <span>a</span><span>b</span>
                current.push(' ');
            }
            for child in node.children() {
                walk(child, current, out);
            }
            if block {
                flush(current, out);
            } else {
                current.push(' ');
            }
        }
        Node::Document | Node::Fragment => {
            for child in node.children() {
                walk(child, current, out);
            }
        }
        _ => {}
    }
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if current.trim().is_empty() {
        current.clear();
        return;
    }
    let cleaned = TAG_LEAK.replace_all(current, " ");
    let mut text = collapse_whitespace(&cleaned);
    if crate::store::has_markup(&text) {
        text = split_leaked_angles(&text);
    }
    if !text.is_empty() {
        out.push(text);
    }
    current.clear();
}

fn split_leaked_angles(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 4);
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '<' && chars.peek().is_some_and(|n| n.is_ascii_alphabetic() || *n == '/' || *n == '!') {
            out.push(' ');
        }
    }
    out
}

/// List markers, headings and other sentence-less stubs.
fn is_short(s: &str) -> bool {
    if s.chars().count() >= MERGE_THRESHOLD {
        return false;
    }
    let tail = s.trim_end_matches(['"', '\'', ')', ']', '”', '’']);
    !tail.ends_with(['.', '!', '?'])
}

fn merge_short(fragments: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut pending: Option<String> = None;
    for frag in fragments {
        let joined = match pending.take() {
            Some(p) => format!("{p} {frag}"),
            None => frag,
        };
        if is_short(&joined) {
            pending = Some(joined);
        } else {
            out.push(joined);
        }
    }
    if let Some(mut tail) = pending {
        // Fold backward until the tail no longer counts as short.
        while let Some(prev) = out.pop() {
            tail = format!("{prev} {tail}");
            if !is_short(&tail) {
                break;
            }
        }
        out.push(tail);
    }
    out
}
