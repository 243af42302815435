//! ConText assertion: modifier phrases, their scope inside the sentence, and
//! the entities they modify.
//!
//! Per sentence:
//! 1. match every rule;
//! 2. drop matches fully covered by a `PSEUDO` match;
//! 3. scope each asserting modifier toward its direction, stopping at the
//!    nearest `TERMINATE` match and at `max_scope` tokens;
//! 4. link the modifier to every entity intersecting the scope, except
//!    entities overlapping the modifier itself;
//! 5. set the modifier's asserted attribute on each linked entity.
//!
//! Attributes are only ever set to true, so a second pass is a no-op.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::docmodel::{AttrValue, Direction, Document, Modifier, Scope, Span};
use crate::error::{Error, Result};
use crate::matching::{MatchForm, PhraseMatcher, TokenConstraint};
use crate::tokenizer::TokenizerRules;

const DEFAULT_RULES: &str = include_str!("../data/context_rules.json");

/// Attribute asserted by each built-in category.
pub fn default_assertion(category: &str) -> Option<&'static str> {
    match category {
        "NEGATED_EXISTENCE" => Some("is_negated"),
        "HISTORICAL" => Some("is_historical"),
        "HYPOTHETICAL" => Some("is_hypothetical"),
        "UNCERTAIN" => Some("is_uncertain"),
        "FAMILY" => Some("is_family"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextRule {
    pub id: String,
    pub form: MatchForm,
    pub category: String,
    pub direction: Direction,
    pub max_scope: Option<usize>,
    /// Attribute set true on linked entities; `None` for TERMINATE/PSEUDO.
    pub asserts: Option<String>,
}

impl ContextRule {
    /// Literal rule for a built-in category (or a terminator/pseudo rule).
    pub fn literal(id: &str, literal: &str, category: &str, direction: Direction) -> Self {
        ContextRule {
            id: id.into(),
            form: MatchForm::Literal(literal.into()),
            category: category.into(),
            direction,
            max_scope: None,
            asserts: direction
                .is_asserting()
                .then(|| default_assertion(category).map(str::to_string))
                .flatten(),
        }
    }

    pub fn with_max_scope(mut self, max_scope: usize) -> Self {
        self.max_scope = Some(max_scope);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_scope == Some(0) {
            return Err(Error::rule(&self.id, "max_scope must be positive"));
        }
        match (self.direction.is_asserting(), &self.asserts) {
            (false, Some(a)) if !a.is_empty() => Err(Error::rule(
                &self.id,
                format!("{} rules cannot assert attributes", self.direction.as_str()),
            )),
            (true, None) => Err(Error::rule(
                &self.id,
                format!(
                    "category `{}` needs an explicit `asserts` attribute",
                    self.category
                ),
            )),
            (true, Some(a)) if a.is_empty() => {
                Err(Error::rule(&self.id, "empty `asserts` attribute"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContextRule {
    id: String,
    literal: Option<String>,
    pattern: Option<Vec<TokenConstraint>>,
    regex: Option<String>,
    category: String,
    direction: String,
    max_scope: Option<usize>,
    asserts: Option<String>,
}

pub fn parse_context_rules(json: &str, origin: &str) -> Result<Vec<ContextRule>> {
    let raw: Vec<RawContextRule> = serde_json::from_str(json)
        .map_err(|e| Error::parse(origin, Some(e.line()), e.to_string()))?;
    raw.into_iter()
        .map(|r| {
            let direction = Direction::parse(&r.direction).ok_or_else(|| {
                Error::rule(&r.id, format!("unknown direction `{}`", r.direction))
            })?;
            let asserts = match r.asserts {
                Some(a) => Some(a),
                None if direction.is_asserting() => {
                    default_assertion(&r.category).map(str::to_string)
                }
                None => None,
            };
            let rule = ContextRule {
                form: MatchForm::from_parts(&r.id, r.literal, r.pattern, r.regex)?,
                id: r.id,
                category: r.category,
                direction,
                max_scope: r.max_scope,
                asserts,
            };
            rule.validate()?;
            Ok(rule)
        })
        .collect()
}

pub fn load_context_rules(path: impl AsRef<Path>) -> Result<Vec<ContextRule>> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_context_rules(&json, &path.display().to_string())
}

pub fn default_context_rules() -> Vec<ContextRule> {
    parse_context_rules(DEFAULT_RULES, "<default context rules>")
        .expect("bundled context rules are valid")
}

#[derive(Debug, Clone)]
pub struct ContextEngine {
    rules: Vec<ContextRule>,
    matcher: PhraseMatcher,
}

impl ContextEngine {
    pub fn compile(rules: Vec<ContextRule>, tokenizer: &TokenizerRules) -> Result<Self> {
        let mut seen = HashSet::new();
        for rule in &rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::DuplicateRule(rule.id.clone()));
            }
            rule.validate()?;
        }
        let matcher =
            PhraseMatcher::compile(rules.iter().map(|r| (r.id.as_str(), &r.form)), tokenizer)?;
        Ok(ContextEngine { rules, matcher })
    }

    pub fn rules(&self) -> &[ContextRule] {
        &self.rules
    }
}

/// Scope of a modifier inside `sentence`, truncated at the nearest terminator
/// on each side and at `rule.max_scope` tokens. Terminators overlapping the
/// modifier are ignored. TERMINATE and PSEUDO rules have an empty scope.
pub fn scope_of(
    modifier: &Span,
    sentence: &Span,
    terminators: &[Span],
    rule: &ContextRule,
) -> Scope {
    let (m_start, m_end) = (modifier.start_token, modifier.end_token);
    let mut scope = Scope::empty_at(m_start);
    scope.after = m_end..m_end;
    let cap = rule.max_scope.unwrap_or(usize::MAX);

    let forward = matches!(
        rule.direction,
        Direction::Forward | Direction::Bidirectional
    );
    let backward = matches!(
        rule.direction,
        Direction::Backward | Direction::Bidirectional
    );

    if forward {
        let mut end = sentence.end_token.min(m_end.saturating_add(cap));
        if let Some(t) = terminators
            .iter()
            .filter(|t| t.start_token >= m_end)
            .map(|t| t.start_token)
            .min()
        {
            end = end.min(t);
        }
        scope.after = m_end..end.max(m_end);
    }
    if backward {
        let mut start = sentence.start_token.max(m_start.saturating_sub(cap));
        if let Some(t) = terminators
            .iter()
            .filter(|t| t.end_token <= m_start)
            .map(|t| t.end_token)
            .max()
        {
            start = start.max(t);
        }
        scope.before = start.min(m_start)..m_start;
    }
    scope
}

/// Token windows ConText works in: the sentences, or the whole document when
/// it has not been segmented.
fn windows(doc: &Document) -> Vec<Span> {
    if doc.sentences.is_empty() && !doc.tokens().is_empty() {
        vec![Span::new(0, doc.tokens().len(), "sentence")]
    } else {
        doc.sentences.clone()
    }
}

/// Recomputes `doc.modifiers` and `doc.links` and sets asserted attributes.
pub fn apply_context(mut doc: Document, engine: &ContextEngine) -> Document {
    let raw = engine.matcher.find(&doc);
    let mut modifiers = Vec::new();
    for sentence in windows(&doc) {
        let inside: Vec<_> = raw
            .iter()
            .filter(|m| m.start >= sentence.start_token && m.end <= sentence.end_token)
            .collect();
        let pseudo: Vec<_> = inside
            .iter()
            .filter(|m| engine.rules[m.rule].direction == Direction::Pseudo)
            .collect();
        let survivors: Vec<_> = inside
            .iter()
            .filter(|m| engine.rules[m.rule].direction != Direction::Pseudo)
            .filter(|m| !pseudo.iter().any(|p| p.start <= m.start && m.end <= p.end))
            .collect();
        let terminators: Vec<Span> = survivors
            .iter()
            .filter(|m| engine.rules[m.rule].direction == Direction::Terminate)
            .map(|m| Span::new(m.start, m.end, engine.rules[m.rule].category.clone()))
            .collect();
        for m in survivors {
            let rule = &engine.rules[m.rule];
            if !rule.direction.is_asserting() {
                continue;
            }
            let span = Span::new(m.start, m.end, rule.category.clone());
            let scope = scope_of(&span, &sentence, &terminators, rule);
            modifiers.push(Modifier {
                span,
                rule_id: rule.id.clone(),
                category: rule.category.clone(),
                direction: rule.direction,
                scope,
                asserts: rule.asserts.clone(),
            });
        }
    }

    let mut links = Vec::new();
    for (mi, modifier) in modifiers.iter().enumerate() {
        for (ei, entity) in doc.entities.iter_mut().enumerate() {
            if entity.span.overlaps(&modifier.span) || !modifier.scope.intersects(&entity.span) {
                continue;
            }
            links.push((mi, ei));
            if let Some(attr) = &modifier.asserts {
                // validated: built-in names are boolean, custom names accept anything
                let _ = entity.set_attr(attr, AttrValue::Bool(true));
            }
        }
    }
    doc.modifiers = modifiers;
    doc.links = links;
    doc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentencizer::{segment, BoundaryRuleSet};
    use crate::target::{compile_rules, match_targets, TargetRule};
    use crate::tokenizer::tokenize;

    fn prepare(text: &str, targets: &[&str]) -> Document {
        let tok = TokenizerRules::default();
        let doc = segment(tokenize(text, &tok), &BoundaryRuleSet::default());
        let rules = targets
            .iter()
            .enumerate()
            .map(|(i, t)| TargetRule::literal(&format!("t{i}"), "PROBLEM", t))
            .collect();
        match_targets(doc, &compile_rules(rules).unwrap())
    }

    fn engine(rules: Vec<ContextRule>) -> ContextEngine {
        ContextEngine::compile(rules, &TokenizerRules::default()).unwrap()
    }

    #[test]
    fn forward_negation() {
        let doc = prepare("no evidence of pneumonia", &["pneumonia"]);
        let e = engine(vec![ContextRule::literal(
            "neg",
            "no evidence of",
            "NEGATED_EXISTENCE",
            Direction::Forward,
        )]);
        let doc = apply_context(doc, &e);
        assert_eq!(doc.links, [(0, 0)]);
        assert!(doc.entities[0].is_negated);
        assert_eq!(doc.modifiers[0].scope.after, 3..4);
    }

    #[test]
    fn sentence_window() {
        let doc = prepare("Patient denies. Pneumonia present.", &["pneumonia"]);
        assert_eq!(doc.sentences.len(), 2);
        let e = engine(vec![ContextRule::literal(
            "d",
            "denies",
            "NEGATED_EXISTENCE",
            Direction::Forward,
        )]);
        let doc = apply_context(doc, &e);
        assert!(doc.links.is_empty());
        assert!(!doc.entities[0].is_negated);
    }

    #[test]
    fn terminator_truncates() {
        let doc = prepare("no cough but fever", &["cough", "fever"]);
        let e = engine(vec![
            ContextRule::literal("no", "no", "NEGATED_EXISTENCE", Direction::Forward),
            ContextRule::literal("but", "but", "CONJ", Direction::Terminate),
        ]);
        let doc = apply_context(doc, &e);
        assert!(doc.entities[0].is_negated);
        assert!(!doc.entities[1].is_negated);
        assert_eq!(doc.links, [(0, 0)]);
        assert_eq!(doc.modifiers.len(), 1);
    }

    #[test]
    fn pseudo_suppresses() {
        let doc = prepare("no increase in cough", &["cough"]);
        let e = engine(vec![
            ContextRule::literal("no", "no", "NEGATED_EXISTENCE", Direction::Forward),
            ContextRule::literal("ni", "no increase", "PSEUDO", Direction::Pseudo),
        ]);
        let doc = apply_context(doc, &e);
        assert!(doc.modifiers.is_empty());
        assert!(!doc.entities[0].is_negated);
    }

    #[test]
    fn backward_and_max_scope() {
        let doc = prepare(
            "cough , fever , rash ruled out",
            &["cough", "fever", "rash"],
        );
        let e = engine(vec![ContextRule::literal(
            "ro",
            "ruled out",
            "NEGATED_EXISTENCE",
            Direction::Backward,
        )
        .with_max_scope(3)]);
        let doc = apply_context(doc, &e);
        let negated: Vec<bool> = doc.entities.iter().map(|e| e.is_negated).collect();
        assert_eq!(negated, [false, true, true]);
    }

    #[test]
    fn modifier_inside_entity_does_not_link() {
        let doc = prepare("history of smoking", &["history of smoking"]);
        let e = engine(vec![ContextRule::literal(
            "h",
            "history of",
            "HISTORICAL",
            Direction::Forward,
        )]);
        let doc = apply_context(doc, &e);
        assert!(doc.links.is_empty());
        assert!(!doc.entities[0].is_historical);
    }

    #[test]
    fn two_modifiers_one_entity() {
        let doc = prepare("denies any possible pneumonia", &["pneumonia"]);
        let e = engine(vec![
            ContextRule::literal("d", "denies", "NEGATED_EXISTENCE", Direction::Forward),
            ContextRule::literal("p", "possible", "UNCERTAIN", Direction::Forward),
        ]);
        let doc = apply_context(doc, &e);
        assert_eq!(doc.links, [(0, 0), (1, 0)]);
        assert!(doc.entities[0].is_negated && doc.entities[0].is_uncertain);
    }

    #[test]
    fn idempotent() {
        let doc = prepare(
            "no cough but fever. history of asthma",
            &["cough", "fever", "asthma"],
        );
        let e = engine(default_context_rules());
        let once = apply_context(doc, &e);
        let twice = apply_context(once.clone(), &e);
        assert_eq!(once, twice);
    }

    #[test]
    fn custom_category_needs_asserts() {
        let json =
            r#"[{"id":"x","literal":"worried about","category":"CONCERN","direction":"forward"}]"#;
        assert!(parse_context_rules(json, "inline").is_err());
        let json = r#"[{"id":"x","literal":"worried about","category":"CONCERN","direction":"forward","asserts":"is_concern"}]"#;
        let rules = parse_context_rules(json, "inline").unwrap();
        let doc = prepare("worried about sepsis", &["sepsis"]);
        let doc = apply_context(doc, &engine(rules));
        assert_eq!(
            doc.entities[0].attr("is_concern"),
            Some(AttrValue::Bool(true))
        );
    }

    #[test]
    fn rule_validation() {
        let json = r#"[{"id":"t","literal":"but","category":"CONJ","direction":"TERMINATE","asserts":"is_negated"}]"#;
        assert!(parse_context_rules(json, "inline").is_err());
        let json = r#"[{"id":"t","literal":"no","category":"NEGATED_EXISTENCE","direction":"FORWARD","max_scope":0}]"#;
        assert!(parse_context_rules(json, "inline").is_err());
        let json =
            r#"[{"id":"t","literal":"no","category":"NEGATED_EXISTENCE","direction":"SIDEWAYS"}]"#;
        assert!(parse_context_rules(json, "inline").is_err());
        let dup = vec![
            ContextRule::literal("a", "no", "NEGATED_EXISTENCE", Direction::Forward),
            ContextRule::literal("a", "not", "NEGATED_EXISTENCE", Direction::Forward),
        ];
        assert!(ContextEngine::compile(dup, &TokenizerRules::default()).is_err());
    }

    #[test]
    fn scope_cases() {
        let sentence = Span::new(0, 10, "");
        let fwd = ContextRule::literal("f", "no", "NEGATED_EXISTENCE", Direction::Forward);
        let m = Span::new(0, 1, "");
        assert_eq!(scope_of(&m, &sentence, &[], &fwd).after, 1..10);
        let term = Span::new(4, 5, "");
        assert_eq!(scope_of(&m, &sentence, &[term], &fwd).after, 1..4);
        let back = ContextRule::literal("b", "ruled out", "NEGATED_EXISTENCE", Direction::Backward);
        assert!(scope_of(&m, &sentence, &[], &back).is_empty());
        let bi = ContextRule::literal("u", "possible", "UNCERTAIN", Direction::Bidirectional)
            .with_max_scope(2);
        let mid = Span::new(5, 6, "");
        let s = scope_of(&mid, &sentence, &[], &bi);
        assert_eq!((s.before, s.after), (3..5, 6..8));
    }

    #[test]
    fn preset_attributes_are_kept() {
        let mut doc = prepare("fever", &["fever"]);
        doc.entities[0].is_family = true;
        let doc = apply_context(doc, &engine(default_context_rules()));
        assert!(doc.entities[0].is_family);
    }
}
