//! Static HTML views of a processed document.
//!
//! [`render_highlight`] yields a `<pre>` fragment whose marks carry their
//! labels in attributes only, so removing the tags leaves the source text.
//! [`render_links`] lays tokens out left to right in an SVG and draws one
//! arrow per modifier→entity link.

use std::fmt::Write;

use crate::docmodel::{Document, Span};

const PALETTE: [&str; 10] = [
    "#ffd6a5", "#caffbf", "#9bf6ff", "#a0c4ff", "#bdb2ff", "#ffc6ff", "#fdffb6", "#ffadad",
    "#d0f4de", "#e4c1f9",
];

const PAGE_STYLE: &str = "body{font-family:sans-serif;margin:2em}\
pre.clintext{font-family:monospace;line-height:2.2;white-space:pre-wrap}\
pre.clintext mark{border-radius:3px;padding:1px 0}\
pre.clintext mark::after{content:attr(data-label);font-size:0.6em;font-family:sans-serif;vertical-align:super;margin-left:2px}\
pre.clintext mark.negated{text-decoration:line-through}\
pre.clintext mark.mod{outline:1px dashed #555}\
pre.clintext mark.sec{font-weight:bold}\
svg.clintext-links text{font-family:monospace;font-size:13px}\
svg.clintext-links .arrow{fill:none;stroke:#444;stroke-width:1.2}\
svg.clintext-links .arrow-label{font-family:sans-serif;font-size:10px;fill:#444}";

/// FNV-1a over the label bytes, reduced to a palette slot.
pub fn label_color(label: &str) -> &'static str {
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    PALETTE[(h % PALETTE.len() as u32) as usize]
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Section,
    Modifier,
    Entity,
}

struct Mark {
    start: usize,
    end: usize,
    kind: Kind,
    open: String,
}

fn open_tag(kind: Kind, label: &str, flags: &[&str], extra: &str) -> String {
    let class = match kind {
        Kind::Section => "sec",
        Kind::Modifier => "mod",
        Kind::Entity => "ent",
    };
    let mut classes = class.to_string();
    for f in flags {
        classes.push(' ');
        classes.push_str(f);
    }
    let color = label_color(label);
    let label = escape(label);
    format!("<mark class=\"{classes}\" data-label=\"{label}\"{extra} title=\"{label}\" style=\"background:{color}\">")
}

fn char_range(doc: &Document, span: &Span) -> (usize, usize) {
    doc.span_chars(span).expect("annotation spans are valid")
}

fn collect_marks(doc: &Document) -> Vec<Mark> {
    let mut marks = Vec::new();
    for section in &doc.sections {
        if let (Some(title), Some(cat)) = (&section.title_span, &section.category) {
            let (start, end) = char_range(doc, title);
            marks.push(Mark {
                start,
                end,
                kind: Kind::Section,
                open: open_tag(Kind::Section, cat, &[], ""),
            });
        }
    }
    for m in &doc.modifiers {
        let (start, end) = char_range(doc, &m.span);
        let extra = format!(" data-direction=\"{}\"", m.direction.as_str());
        marks.push(Mark {
            start,
            end,
            kind: Kind::Modifier,
            open: open_tag(Kind::Modifier, &m.category, &[], &extra),
        });
    }
    for e in &doc.entities {
        let (start, end) = char_range(doc, &e.span);
        let flags: Vec<&str> = [
            (e.is_negated, "negated"),
            (e.is_historical, "historical"),
            (e.is_hypothetical, "hypothetical"),
            (e.is_uncertain, "uncertain"),
            (e.is_family, "family"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        let extra = e
            .cui
            .as_ref()
            .map(|c| format!(" data-cui=\"{}\"", escape(c)))
            .unwrap_or_default();
        marks.push(Mark {
            start,
            end,
            kind: Kind::Entity,
            open: open_tag(Kind::Entity, &e.category, &flags, &extra),
        });
    }
    marks.sort_by_key(|m| (m.start, std::cmp::Reverse(m.end), m.kind));
    marks
}

/// Source text in a `<pre>` block with sections, modifiers and entities
/// wrapped in `<mark>` elements. Marks that would cross an already open mark
/// are left out so the markup stays well formed.
pub fn render_highlight(doc: &Document) -> String {
    let chars: Vec<char> = doc.text().chars().collect();
    let mut out = String::from("<pre class=\"clintext\">");
    let mut stack: Vec<usize> = Vec::new();
    let mut pos = 0;
    let emit = |out: &mut String, from: usize, to: usize| {
        let s: String = chars[from..to].iter().collect();
        out.push_str(&escape(&s));
    };
    for mark in collect_marks(doc) {
        while let Some(&end) = stack.last() {
            if end > mark.start {
                break;
            }
            emit(&mut out, pos, end);
            pos = end;
            out.push_str("</mark>");
            stack.pop();
        }
        if stack.last().is_some_and(|&end| mark.end > end) {
            continue;
        }
        emit(&mut out, pos, mark.start);
        pos = mark.start;
        out.push_str(&mark.open);
        stack.push(mark.end);
    }
    while let Some(end) = stack.pop() {
        emit(&mut out, pos, end);
        pos = end;
        out.push_str("</mark>");
    }
    emit(&mut out, pos, chars.len());
    out.push_str("</pre>");
    out
}

const CHAR_W: usize = 8;
const GAP: usize = 10;
const MARGIN: usize = 10;

/// Tokens in one row with an arc per link from the modifier to the entity,
/// labelled with the modifier category.
pub fn render_links(doc: &Document) -> String {
    let n = doc.tokens().len();
    let mut xs = Vec::with_capacity(n);
    let mut x = MARGIN;
    for i in 0..n {
        let w = doc.token_text(i).chars().count() * CHAR_W;
        xs.push((x, w));
        x += w + GAP;
    }
    let center = |span: &Span| {
        let (a, _) = xs[span.start_token];
        let (b, wb) = xs[span.end_token - 1];
        (a + b + wb) / 2
    };
    let max_level = doc
        .links
        .iter()
        .map(|&(m, e)| {
            doc.modifiers[m]
                .span
                .start_token
                .abs_diff(doc.entities[e].span.start_token)
                .min(8)
        })
        .max()
        .unwrap_or(0);
    let baseline = 40 + max_level * 12;
    let width = x.max(MARGIN * 2) + MARGIN;
    let height = baseline + 20;
    let mut out = String::new();
    let _ = write!(
        out,
        "<svg class=\"clintext-links\" xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    out.push_str(
        "<defs><marker id=\"head\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\"/></marker></defs>",
    );
    let mut token_fill = vec![None; n];
    for m in &doc.modifiers {
        for t in m.span.range() {
            token_fill[t] = Some(label_color(&m.category));
        }
    }
    for e in &doc.entities {
        for t in e.span.range() {
            token_fill[t] = Some(label_color(&e.category));
        }
    }
    for (i, &(tx, w)) in xs.iter().enumerate() {
        if let Some(fill) = token_fill[i] {
            let _ = write!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"18\" fill=\"{fill}\"/>",
                tx - 2,
                baseline - 14,
                w + 4
            );
        }
        let _ = write!(
            out,
            "<text x=\"{tx}\" y=\"{baseline}\">{}</text>",
            escape(doc.token_text(i))
        );
    }
    for &(mi, ei) in &doc.links {
        let m = &doc.modifiers[mi];
        let e = &doc.entities[ei];
        let (x1, x2) = (center(&m.span), center(&e.span));
        let level = m.span.start_token.abs_diff(e.span.start_token).min(8);
        let y = baseline - 16;
        let top = y - 12 - level * 12;
        let _ = write!(
            out,
            "<path class=\"arrow\" data-from=\"{mi}\" data-to=\"{ei}\" d=\"M{x1},{y} C{x1},{top} {x2},{top} {x2},{y}\" marker-end=\"url(#head)\"/>"
        );
        let _ = write!(
            out,
            "<text class=\"arrow-label\" x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            (x1 + x2) / 2,
            top + 4,
            escape(&m.category)
        );
    }
    out.push_str("</svg>");
    out
}

/// Self-contained page with both views.
pub fn render_page(title: &str, doc: &Document) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>{PAGE_STYLE}</style>\n</head>\n<body>\n<h1>{}</h1>\n{}\n<div style=\"overflow-x:auto\">\n{}\n</div>\n</body>\n</html>\n",
        escape(title),
        escape(title),
        render_highlight(doc),
        render_links(doc)
    )
}

/// Removes tags and decodes the entities produced by [`escape`].
pub fn strip_markup(html: &str) -> String {
    let mut text = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            c if !in_tag => text.push(c),
            _ => {}
        }
    }
    text.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}
