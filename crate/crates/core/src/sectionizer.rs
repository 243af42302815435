//! Section title detection, the section tree, and section-level attribute
//! overrides on entities.
//!
//! Titles are recognised only at the start of a line (after optional blanks)
//! and must be followed by a colon or the end of the line, unless the title
//! literal itself ends with a colon. Longest literal wins at a position; the
//! earlier rule wins ties.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::{AlignMode, Attrs, Document, Section, Span};
use crate::error::{Error, Result};
use crate::matching::fold_char;

const DEFAULT_RULES: &str = include_str!("../data/section_rules.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionRule {
    pub category: String,
    pub literals: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Attrs::is_empty")]
    pub attr_overrides: Attrs,
}

impl SectionRule {
    pub fn new(category: impl Into<String>, literals: &[&str]) -> Self {
        SectionRule {
            category: category.into(),
            literals: literals.iter().map(|s| s.to_string()).collect(),
            parents: None,
            attr_overrides: Attrs::new(),
        }
    }
}

pub fn validate_section_rules(rules: &[SectionRule]) -> Result<()> {
    let categories: HashSet<&str> = rules.iter().map(|r| r.category.as_str()).collect();
    for rule in rules {
        if rule.category.is_empty() {
            return Err(Error::rule("<section>", "empty section category"));
        }
        if rule.literals.is_empty() || rule.literals.iter().any(|l| l.trim().is_empty()) {
            return Err(Error::rule(
                &rule.category,
                "section rule needs non-empty literals",
            ));
        }
        for parent in rule.parents.iter().flatten() {
            if !categories.contains(parent.as_str()) {
                return Err(Error::rule(
                    &rule.category,
                    format!("unknown parent category `{parent}`"),
                ));
            }
        }
    }
    Ok(())
}

pub fn parse_section_rules(json: &str, origin: &str) -> Result<Vec<SectionRule>> {
    let rules: Vec<SectionRule> = serde_json::from_str(json)
        .map_err(|e| Error::parse(origin, Some(e.line()), e.to_string()))?;
    validate_section_rules(&rules)?;
    Ok(rules)
}

pub fn load_section_rules(path: impl AsRef<Path>) -> Result<Vec<SectionRule>> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_section_rules(&json, &path.display().to_string())
}

pub fn default_section_rules() -> Vec<SectionRule> {
    parse_section_rules(DEFAULT_RULES, "<default section rules>")
        .expect("bundled section rules are valid")
}

/// A recognised title: character range and rule index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TitleMatch {
    pub start_char: usize,
    pub end_char: usize,
    pub rule: usize,
}

fn line_starts(chars: &[char]) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(0).chain(
        chars
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == '\n')
            .map(|(i, _)| i + 1),
    )
}

/// Scans line starts for section titles.
pub fn find_titles(text: &str, rules: &[SectionRule]) -> Vec<TitleMatch> {
    let chars: Vec<char> = text.chars().collect();
    let folded: Vec<char> = chars.iter().map(|&c| fold_char(c)).collect();
    let literals: Vec<(usize, Vec<char>)> = rules
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.literals
                .iter()
                .map(move |l| (i, l.trim().chars().map(fold_char).collect()))
        })
        .collect();

    let mut out = Vec::new();
    for line in line_starts(&chars) {
        let mut start = line;
        while start < chars.len() && chars[start] != '\n' && chars[start].is_whitespace() {
            start += 1;
        }
        let mut best: Option<(usize, usize)> = None;
        for (rule, lit) in &literals {
            let end = start + lit.len();
            if end > chars.len() || folded[start..end] != lit[..] {
                continue;
            }
            if !title_terminated(&chars, end, lit.last() == Some(&':')) {
                continue;
            }
            if best.is_none_or(|(_, len)| lit.len() > len) {
                best = Some((*rule, lit.len()));
            }
        }
        if let Some((rule, len)) = best {
            let mut end = start + len;
            // a colon after the literal belongs to the title
            let mut k = end;
            while k < chars.len() && chars[k] != '\n' && chars[k].is_whitespace() {
                k += 1;
            }
            if k < chars.len() && chars[k] == ':' && chars[end - 1] != ':' {
                end = k + 1;
            }
            out.push(TitleMatch {
                start_char: start,
                end_char: end,
                rule,
            });
        }
    }
    out
}

fn title_terminated(chars: &[char], end: usize, literal_has_colon: bool) -> bool {
    if literal_has_colon {
        return true;
    }
    let mut k = end;
    while k < chars.len() && chars[k] != '\n' && chars[k].is_whitespace() {
        k += 1;
    }
    k == chars.len() || chars[k] == '\n' || chars[k] == ':'
}

/// Splits the document into sections and builds the section forest.
///
/// A section becomes the child of the nearest open section (the previous
/// section or one of its ancestors) whose category its rule lists as a
/// parent; otherwise it is a root.
pub fn detect_sections(mut doc: Document, rules: &[SectionRule]) -> Document {
    let n = doc.tokens().len();
    doc.sections.clear();
    if n == 0 {
        return doc;
    }

    let mut titles: Vec<(Span, usize)> = Vec::new();
    for t in find_titles(doc.text(), rules) {
        let Ok(Some(span)) = doc.char_span(t.start_char, t.end_char, AlignMode::Expand) else {
            continue;
        };
        // a title cannot start inside the previous title
        if titles
            .last()
            .is_some_and(|(prev, _)| span.start_token < prev.end_token)
        {
            continue;
        }
        titles.push((span, t.rule));
    }

    let mut sections: Vec<Section> = Vec::new();
    let first_title = titles.first().map_or(n, |(s, _)| s.start_token);
    if first_title > 0 {
        sections.push(Section {
            category: None,
            title_span: None,
            body_span: Some(Span::new(0, first_title, "section_body")),
            span: Span::new(0, first_title, "section"),
            parent: None,
            children: Vec::new(),
            overrides: Attrs::new(),
        });
    }
    for (k, (title, rule_idx)) in titles.iter().enumerate() {
        let rule = &rules[*rule_idx];
        let end = titles.get(k + 1).map_or(n, |(next, _)| next.start_token);
        let mut title = title.clone();
        title.end_token = title.end_token.min(end);
        title.label = rule.category.clone();
        let body = (title.end_token < end).then(|| Span::new(title.end_token, end, "section_body"));
        sections.push(Section {
            category: Some(rule.category.clone()),
            span: Span::new(title.start_token, end, rule.category.clone()),
            title_span: Some(title),
            body_span: body,
            parent: None,
            children: Vec::new(),
            overrides: rule.attr_overrides.clone(),
        });
    }

    let parents_of: HashMap<&str, &Vec<String>> = rules
        .iter()
        .filter_map(|r| r.parents.as_ref().map(|p| (r.category.as_str(), p)))
        .collect();
    for i in 1..sections.len() {
        let Some(allowed) = sections[i]
            .category
            .as_deref()
            .and_then(|c| parents_of.get(c))
        else {
            continue;
        };
        let mut cursor = Some(i - 1);
        while let Some(j) = cursor {
            if sections[j]
                .category
                .as_ref()
                .is_some_and(|c| allowed.contains(c))
            {
                sections[i].parent = Some(j);
                sections[j].children.push(i);
                break;
            }
            cursor = sections[j].parent;
        }
    }
    doc.sections = sections;
    doc
}

/// Copies section categories and overrides onto entities. A boolean
/// attribute already true on the entity is left alone, so overrides never
/// turn a true attribute false.
pub fn apply_section_attributes(mut doc: Document) -> Result<Document> {
    for idx in 0..doc.entities.len() {
        let start = doc.entities[idx].span.start_token;
        let sec = doc.section_of(start).ok_or_else(|| {
            Error::Internal(format!(
                "entity {idx} at token {start} is not inside any section"
            ))
        })?;
        let section = &doc.sections[sec];
        let category = section.category.clone();
        let overrides = section.overrides.clone();
        let entity = &mut doc.entities[idx];
        entity.section_category = category;
        for (key, value) in overrides {
            if entity.is_set(&key) {
                continue;
            }
            entity.set_attr(&key, value)?;
        }
    }
    Ok(doc)
}

fn slugify(s: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('_');
            }
            out.extend(c.to_lowercase());
            gap = false;
        } else {
            gap = true;
        }
    }
    out
}

/// Generates one rule per template line ending in `:`. The literal is the
/// trimmed line; the category is `prefix` plus a slug of the line. Repeated
/// lines are dropped, and distinct lines with the same slug share one rule.
pub fn rules_from_template(template: &str, prefix: &str) -> Vec<SectionRule> {
    let mut rules: Vec<SectionRule> = Vec::new();
    for line in template.lines() {
        let line = line.trim();
        if !line.ends_with(':') {
            continue;
        }
        let slug = slugify(line);
        if slug.is_empty() {
            continue;
        }
        let category = format!("{prefix}{slug}");
        match rules.iter_mut().find(|r| r.category == category) {
            Some(rule) => {
                if !rule.literals.iter().any(|l| l == line) {
                    rule.literals.push(line.to_string());
                }
            }
            None => rules.push(SectionRule::new(category, &[line])),
        }
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::Entity;
    use crate::sentencizer::{segment, BoundaryRuleSet};
    use crate::tokenizer::{tokenize, TokenizerRules};

    fn prepared(text: &str) -> Document {
        segment(
            tokenize(text, &TokenizerRules::default()),
            &BoundaryRuleSet::default(),
        )
    }

    fn cats(doc: &Document) -> Vec<Option<&str>> {
        doc.sections.iter().map(|s| s.category.as_deref()).collect()
    }

    fn check_partition(doc: &Document) {
        let mut cursor = 0;
        for s in &doc.sections {
            assert_eq!(s.span.start_token, cursor);
            assert!(s.span.end_token > s.span.start_token);
            if let Some(t) = &s.title_span {
                assert!(s.span.contains(t));
                if let Some(b) = &s.body_span {
                    assert!(b.start_token >= t.end_token);
                }
            }
            cursor = s.span.end_token;
        }
        assert_eq!(cursor, doc.tokens().len());
    }

    #[test]
    fn two_root_sections() {
        let doc = detect_sections(
            prepared("Past Medical History: diabetes.\nPlan: start metformin."),
            &default_section_rules(),
        );
        assert_eq!(cats(&doc), [Some("past_medical_history"), Some("plan")]);
        assert!(doc.sections.iter().all(|s| s.parent.is_none()));
        check_partition(&doc);
        let title = doc.sections[0].title_span.as_ref().unwrap();
        assert_eq!(doc.span_text(title).unwrap(), "Past Medical History:");
    }

    #[test]
    fn implicit_section_only() {
        let doc = detect_sections(prepared("Pt doing well today."), &default_section_rules());
        assert_eq!(cats(&doc), [None]);
        assert_eq!(doc.sections[0].span.range(), 0..doc.tokens().len());
        assert!(detect_sections(prepared(""), &default_section_rules())
            .sections
            .is_empty());
    }

    #[test]
    fn subsection_nesting() {
        let doc = detect_sections(
            prepared("Physical Exam:\nVitals:\nBP 120/80"),
            &default_section_rules(),
        );
        assert_eq!(cats(&doc), [Some("physical_exam"), Some("vitals")]);
        assert_eq!(doc.sections[1].parent, Some(0));
        assert_eq!(doc.sections[0].children, [1]);
        assert!(doc.sections[0].body_span.is_none());
        check_partition(&doc);
    }

    #[test]
    fn nesting_walks_ancestors() {
        let doc = detect_sections(
            prepared("Physical Exam:\nVitals: stable\nHEENT: normal\nPlan: none"),
            &default_section_rules(),
        );
        assert_eq!(
            cats(&doc),
            [
                Some("physical_exam"),
                Some("vitals"),
                Some("heent"),
                Some("plan")
            ]
        );
        assert_eq!(doc.sections[2].parent, Some(0));
        assert_eq!(doc.sections[0].children, [1, 2]);
        assert_eq!(doc.sections[3].parent, None);
    }

    #[test]
    fn longest_literal_wins() {
        let rules = vec![
            SectionRule::new("history", &["History"]),
            SectionRule::new("hpi", &["History of Present Illness"]),
        ];
        let doc = detect_sections(prepared("History of Present Illness: cough"), &rules);
        assert_eq!(cats(&doc), [Some("hpi")]);
    }

    #[test]
    fn titles_only_at_line_start() {
        let doc = detect_sections(
            prepared("Patient has a plan: rest"),
            &default_section_rules(),
        );
        assert_eq!(cats(&doc), [None]);
        let doc = detect_sections(prepared("Intro\n   plan: rest"), &default_section_rules());
        assert_eq!(cats(&doc), [None, Some("plan")]);
        // not followed by colon or end of line
        let doc = detect_sections(
            prepared("Plan to return tomorrow"),
            &default_section_rules(),
        );
        assert_eq!(cats(&doc), [None]);
    }

    fn with_entity(text: &str, needle: &str) -> Document {
        let mut doc = detect_sections(prepared(text), &default_section_rules());
        let start = text.find(needle).unwrap();
        let s = text[..start].chars().count();
        let span = doc
            .char_span(s, s + needle.chars().count(), AlignMode::Expand)
            .unwrap()
            .unwrap();
        doc.entities.push(Entity::new(span, "PROBLEM"));
        doc
    }

    #[test]
    fn overrides_applied() {
        let doc = with_entity(
            "Past Medical History: diabetes.\nPlan: start metformin.",
            "diabetes",
        );
        let doc = apply_section_attributes(doc).unwrap();
        assert!(doc.entities[0].is_historical);
        assert_eq!(
            doc.entities[0].section_category.as_deref(),
            Some("past_medical_history")
        );
    }

    #[test]
    fn implicit_section_no_overrides() {
        let doc = apply_section_attributes(with_entity("diabetes noted", "diabetes")).unwrap();
        assert!(!doc.entities[0].is_historical);
        assert_eq!(doc.entities[0].section_category, None);
    }

    #[test]
    fn overrides_never_clear_true() {
        let mut rules = vec![SectionRule::new("screen", &["Screen"])];
        rules[0]
            .attr_overrides
            .insert("is_negated".into(), false.into());
        let mut doc = detect_sections(prepared("Screen: fever"), &rules);
        let mut e = Entity::new(Span::new(2, 3, ""), "P");
        e.is_negated = true;
        doc.entities.push(e);
        let doc = apply_section_attributes(doc).unwrap();
        assert!(doc.entities[0].is_negated);
        let again = apply_section_attributes(doc.clone()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn entity_outside_sections_is_internal_error() {
        let mut doc = prepared("fever");
        doc.entities.push(Entity::new(Span::new(0, 1, ""), "P"));
        assert!(matches!(
            apply_section_attributes(doc),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn template_rules() {
        let rules = rules_from_template("Any cough?:\nFever?:\n", "screen_");
        let cats: Vec<&str> = rules.iter().map(|r| r.category.as_str()).collect();
        assert_eq!(cats, ["screen_any_cough", "screen_fever"]);
        assert_eq!(rules[0].literals, ["Any cough?:"]);
        assert!(rules_from_template("", "x_").is_empty());
        assert_eq!(
            rules_from_template("Fever?:\nnotes\n  Fever?:  \n", "s_").len(),
            1
        );
    }

    #[test]
    fn template_literal_with_colon_matches_inline_answer() {
        let rules = rules_from_template("Any cough?:\nFever?:\n", "screen_");
        let doc = detect_sections(prepared("Any cough?: yes\nFever?: no"), &rules);
        assert_eq!(cats(&doc), [Some("screen_any_cough"), Some("screen_fever")]);
        let body = doc.sections[0].body_span.as_ref().unwrap();
        assert_eq!(doc.span_text(body).unwrap(), "yes");
    }

    #[test]
    fn rule_validation() {
        let mut r = SectionRule::new("child", &["Child"]);
        r.parents = Some(vec!["missing".into()]);
        assert!(validate_section_rules(&[r]).is_err());
        assert!(validate_section_rules(&[SectionRule::new("x", &[])]).is_err());
        assert!(parse_section_rules("[{\"category\":\"x\"}]", "inline").is_err());
    }
}
