//! Rule-based concept extraction.
//!
//! Rules find candidate spans by literal phrase, token pattern or raw-text
//! regular expression. Overlapping candidates are resolved longest first,
//! then by earlier start, then by rule order.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::docmodel::{AttrValue, Attrs, Document, Entity, Span, ASSERTION_ATTRS};
use crate::error::{Error, Result};
use crate::matching::{MatchForm, PhraseMatcher, RawMatch, TokenConstraint};
use crate::tokenizer::TokenizerRules;

const DEFAULT_RULES: &str = include_str!("../data/target_rules.json");

#[derive(Debug, Clone, PartialEq)]
pub struct TargetRule {
    pub id: String,
    pub category: String,
    pub form: MatchForm,
    /// Copied onto every matched entity. `cui` fills the concept field; the
    /// assertion booleans preset the corresponding flags.
    pub metadata: Attrs,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargetRule {
    id: String,
    category: String,
    literal: Option<String>,
    pattern: Option<Vec<TokenConstraint>>,
    regex: Option<String>,
    #[serde(default)]
    metadata: Attrs,
}

impl TargetRule {
    pub fn literal(id: &str, category: &str, literal: &str) -> Self {
        TargetRule {
            id: id.into(),
            category: category.into(),
            form: MatchForm::Literal(literal.into()),
            metadata: Attrs::new(),
        }
    }

    pub fn regex(id: &str, category: &str, regex: &str) -> Self {
        TargetRule {
            id: id.into(),
            category: category.into(),
            form: MatchForm::Regex(regex.into()),
            metadata: Attrs::new(),
        }
    }

    pub fn pattern(id: &str, category: &str, pattern: Vec<TokenConstraint>) -> Self {
        TargetRule {
            id: id.into(),
            category: category.into(),
            form: MatchForm::Pattern(pattern),
            metadata: Attrs::new(),
        }
    }

    fn check_metadata(&self) -> Result<()> {
        for (key, value) in &self.metadata {
            let ok = match key.as_str() {
                "cui" => value.as_str().is_some_and(|s| !s.is_empty()),
                k if ASSERTION_ATTRS.contains(&k) => value.as_bool().is_some(),
                _ => true,
            };
            if !ok {
                return Err(Error::rule(
                    &self.id,
                    format!("metadata `{key}` has the wrong type"),
                ));
            }
        }
        Ok(())
    }
}

pub fn parse_target_rules(json: &str, origin: &str) -> Result<Vec<TargetRule>> {
    let raw: Vec<RawTargetRule> = serde_json::from_str(json)
        .map_err(|e| Error::parse(origin, Some(e.line()), e.to_string()))?;
    raw.into_iter()
        .map(|r| {
            Ok(TargetRule {
                form: MatchForm::from_parts(&r.id, r.literal, r.pattern, r.regex)?,
                id: r.id,
                category: r.category,
                metadata: r.metadata,
            })
        })
        .collect()
}

pub fn load_target_rules(path: impl AsRef<Path>) -> Result<Vec<TargetRule>> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_target_rules(&json, &path.display().to_string())
}

pub fn default_target_rules() -> Vec<TargetRule> {
    parse_target_rules(DEFAULT_RULES, "<default target rules>")
        .expect("bundled target rules are valid")
}

#[derive(Debug, Clone)]
pub struct TargetMatcher {
    rules: Vec<TargetRule>,
    phrases: PhraseMatcher,
}

impl TargetMatcher {
    pub fn compile(rules: Vec<TargetRule>, tokenizer: &TokenizerRules) -> Result<Self> {
        let mut seen = HashSet::new();
        for rule in &rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::DuplicateRule(rule.id.clone()));
            }
            if rule.category.is_empty() {
                return Err(Error::rule(&rule.id, "category is empty"));
            }
            rule.check_metadata()?;
        }
        let phrases =
            PhraseMatcher::compile(rules.iter().map(|r| (r.id.as_str(), &r.form)), tokenizer)?;
        Ok(TargetMatcher { rules, phrases })
    }

    pub fn rules(&self) -> &[TargetRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Every match before overlap resolution.
    pub fn raw_matches(&self, doc: &Document) -> Vec<RawMatch> {
        self.phrases.find(doc)
    }
}

/// Compiles rules against the default tokenizer rules.
pub fn compile_rules(rules: Vec<TargetRule>) -> Result<TargetMatcher> {
    TargetMatcher::compile(rules, &TokenizerRules::default())
}

/// Keeps the longest of overlapping matches (ties: earlier start, then lower
/// rule index). Output is sorted by start.
pub fn resolve_longest(mut matches: Vec<RawMatch>) -> Vec<RawMatch> {
    matches.sort_by_key(|m| (std::cmp::Reverse(m.end - m.start), m.start, m.rule));
    let mut kept: Vec<RawMatch> = Vec::new();
    for m in matches {
        if kept.iter().all(|k| k.end <= m.start || m.end <= k.start) {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| (m.start, m.end));
    kept
}

fn entity_for(rule: &TargetRule, m: &RawMatch) -> Entity {
    let mut ent = Entity::new(
        Span::new(m.start, m.end, rule.category.clone()),
        rule.category.clone(),
    );
    for (key, value) in &rule.metadata {
        match (key.as_str(), value) {
            ("cui", AttrValue::Str(cui)) => {
                ent.cui = Some(cui.clone());
                ent.similarity = Some(1.0);
            }
            _ => {
                // types were checked at compile time
                let _ = ent.set_attr(key, value.clone());
            }
        }
    }
    ent
}

/// Replaces `doc.entities` with the surviving target matches.
pub fn match_targets(mut doc: Document, matcher: &TargetMatcher) -> Document {
    let kept = resolve_longest(matcher.raw_matches(&doc));
    doc.entities = kept
        .iter()
        .map(|m| entity_for(&matcher.rules[m.rule], m))
        .collect();
    doc
}
