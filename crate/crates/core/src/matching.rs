//! Match forms shared by target and context rules: literal phrases, token
//! patterns and document-level regular expressions.

use std::collections::HashMap;

use regex::Regex;
use regex_automata::{meta, Anchored, Input, MatchKind};
use serde::{Deserialize, Serialize};

use crate::docmodel::{AlignMode, Document};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, TokenizerRules};

/// Simple case fold: single-character Unicode lowercase mapping.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

/// One position of a token pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint", into = "RawConstraint")]
pub enum TokenConstraint {
    Text(String),
    Lower(String),
    Regex(String),
    Wildcard,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regex: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    wildcard: bool,
}

impl TryFrom<RawConstraint> for TokenConstraint {
    type Error = String;

    fn try_from(raw: RawConstraint) -> std::result::Result<Self, String> {
        match (raw.text, raw.lower, raw.regex, raw.wildcard) {
            (Some(t), None, None, false) => Ok(TokenConstraint::Text(t)),
            (None, Some(l), None, false) => Ok(TokenConstraint::Lower(l)),
            (None, None, Some(r), false) => Ok(TokenConstraint::Regex(r)),
            (None, None, None, true) => Ok(TokenConstraint::Wildcard),
            _ => Err("token constraint needs exactly one of text, lower, regex, wildcard".into()),
        }
    }
}

impl From<TokenConstraint> for RawConstraint {
    fn from(c: TokenConstraint) -> Self {
        let mut raw = RawConstraint::default();
        match c {
            TokenConstraint::Text(t) => raw.text = Some(t),
            TokenConstraint::Lower(l) => raw.lower = Some(l),
            TokenConstraint::Regex(r) => raw.regex = Some(r),
            TokenConstraint::Wildcard => raw.wildcard = true,
        }
        raw
    }
}

/// What a rule matches. Exactly one form per rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchForm {
    Literal(String),
    Pattern(Vec<TokenConstraint>),
    Regex(String),
}

impl MatchForm {
    /// Builds a form from the optional `literal` / `pattern` / `regex` keys of
    /// a rule file entry.
    pub fn from_parts(
        id: &str,
        literal: Option<String>,
        pattern: Option<Vec<TokenConstraint>>,
        regex: Option<String>,
    ) -> Result<Self> {
        match (literal, pattern, regex) {
            (Some(l), None, None) => Ok(MatchForm::Literal(l)),
            (None, Some(p), None) => Ok(MatchForm::Pattern(p)),
            (None, None, Some(r)) => Ok(MatchForm::Regex(r)),
            _ => Err(Error::rule(
                id,
                "exactly one of literal, pattern, regex must be set",
            )),
        }
    }

    pub fn literal(&self) -> Option<&str> {
        match self {
            MatchForm::Literal(l) => Some(l),
            _ => None,
        }
    }

    pub fn pattern(&self) -> Option<&[TokenConstraint]> {
        match self {
            MatchForm::Pattern(p) => Some(p),
            _ => None,
        }
    }

    pub fn regex(&self) -> Option<&str> {
        match self {
            MatchForm::Regex(r) => Some(r),
            _ => None,
        }
    }
}

/// A raw match before any overlap handling: token range plus rule index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawMatch {
    pub start: usize,
    pub end: usize,
    pub rule: usize,
}

#[derive(Debug, Clone)]
enum CompiledConstraint {
    Text(String),
    Lower(String),
    Regex(Regex),
    Wildcard,
}

impl CompiledConstraint {
    fn accepts(&self, token: &str) -> bool {
        match self {
            CompiledConstraint::Text(t) => t == token,
            CompiledConstraint::Lower(l) => *l == fold(token),
            CompiledConstraint::Regex(re) => re.is_match(token),
            CompiledConstraint::Wildcard => true,
        }
    }
}

#[derive(Debug, Clone)]
struct CompiledRegex {
    leftmost: Regex,
    longest: meta::Regex,
}

impl CompiledRegex {
    fn new(src: &str) -> std::result::Result<Self, String> {
        let leftmost = Regex::new(src).map_err(|e| e.to_string())?;
        let longest = meta::Regex::builder()
            .configure(meta::Regex::config().match_kind(MatchKind::All))
            .build(src)
            .map_err(|e| e.to_string())?;
        Ok(CompiledRegex { leftmost, longest })
    }

    /// Non-overlapping byte ranges: leftmost start, longest match at that
    /// start. Empty matches are skipped.
    fn find_all(&self, hay: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos <= hay.len() {
            let Some(m) = self.leftmost.find_at(hay, pos) else {
                break;
            };
            let start = m.start();
            let end = self
                .longest
                .search(&Input::new(hay).range(start..).anchored(Anchored::Yes))
                .map_or(m.end(), |l| l.end().max(m.end()));
            if end > start {
                out.push((start, end));
                pos = end;
            } else {
                pos = start + hay[start..].chars().next().map_or(1, char::len_utf8);
            }
        }
        out
    }
}

/// Compiled set of match forms, indexed in rule order.
#[derive(Debug, Clone, Default)]
pub struct PhraseMatcher {
    /// First folded token -> (rule index, folded literal tokens).
    phrases: HashMap<String, Vec<(usize, Vec<String>)>>,
    patterns: Vec<(usize, Vec<CompiledConstraint>)>,
    regexes: Vec<(usize, CompiledRegex)>,
    len: usize,
}

impl PhraseMatcher {
    /// Compiles forms in order; `ids` name the rules in diagnostics.
    pub fn compile<'a>(
        forms: impl IntoIterator<Item = (&'a str, &'a MatchForm)>,
        tokenizer: &TokenizerRules,
    ) -> Result<Self> {
        let mut m = PhraseMatcher::default();
        for (idx, (id, form)) in forms.into_iter().enumerate() {
            m.len += 1;
            match form {
                MatchForm::Literal(lit) => {
                    let doc = tokenize(lit, tokenizer);
                    let toks: Vec<String> = (0..doc.tokens().len())
                        .map(|i| fold(doc.token_text(i)))
                        .collect();
                    if toks.is_empty() {
                        return Err(Error::rule(id, "literal has no tokens"));
                    }
                    m.phrases
                        .entry(toks[0].clone())
                        .or_default()
                        .push((idx, toks));
                }
                MatchForm::Pattern(constraints) => {
                    if constraints.is_empty() {
                        return Err(Error::rule(id, "pattern is empty"));
                    }
                    let compiled = constraints
                        .iter()
                        .map(|c| {
                            Ok(match c {
                                TokenConstraint::Text(t) => CompiledConstraint::Text(t.clone()),
                                TokenConstraint::Lower(l) => CompiledConstraint::Lower(fold(l)),
                                TokenConstraint::Regex(r) => CompiledConstraint::Regex(
                                    Regex::new(&format!("^(?:{r})$")).map_err(|e| {
                                        Error::rule(id, format!("invalid token regex: {e}"))
                                    })?,
                                ),
                                TokenConstraint::Wildcard => CompiledConstraint::Wildcard,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    m.patterns.push((idx, compiled));
                }
                MatchForm::Regex(src) => {
                    let re = CompiledRegex::new(src)
                        .map_err(|e| Error::rule(id, format!("invalid regex: {e}")))?;
                    m.regexes.push((idx, re));
                }
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Every raw match in the document, sorted by (start, end, rule).
    pub fn find(&self, doc: &Document) -> Vec<RawMatch> {
        let n = doc.tokens().len();
        let mut out = Vec::new();
        if !self.phrases.is_empty() || !self.patterns.is_empty() {
            let folded: Vec<String> = (0..n).map(|i| fold(doc.token_text(i))).collect();
            for start in 0..n {
                if let Some(cands) = self.phrases.get(&folded[start]) {
                    for (rule, toks) in cands {
                        let end = start + toks.len();
                        if end <= n && folded[start..end] == toks[..] {
                            out.push(RawMatch {
                                start,
                                end,
                                rule: *rule,
                            });
                        }
                    }
                }
                for (rule, constraints) in &self.patterns {
                    let end = start + constraints.len();
                    if end <= n
                        && constraints
                            .iter()
                            .enumerate()
                            .all(|(k, c)| c.accepts(doc.token_text(start + k)))
                    {
                        out.push(RawMatch {
                            start,
                            end,
                            rule: *rule,
                        });
                    }
                }
            }
        }
        for (rule, re) in &self.regexes {
            for (bs, be) in re.find_all(doc.text()) {
                let (cs, ce) = (doc.byte_to_char(bs), doc.byte_to_char(be));
                if let Ok(Some(span)) = doc.char_span(cs, ce, AlignMode::Expand) {
                    out.push(RawMatch {
                        start: span.start_token,
                        end: span.end_token,
                        rule: *rule,
                    });
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Checks that a token range satisfies a form, independently of the compiled
/// matcher. Regex forms are satisfied when some regex match in the text lies
/// within the range's character extent and touches its first and last token.
pub fn span_satisfies(doc: &Document, start: usize, end: usize, form: &MatchForm) -> bool {
    let texts: Vec<&str> = (start..end).map(|i| doc.token_text(i)).collect();
    match form {
        MatchForm::Literal(lit) => {
            let words: Vec<String> = lit.split_whitespace().map(fold).collect();
            fold(&texts.concat()) == words.concat()
        }
        MatchForm::Pattern(p) => {
            p.len() == texts.len()
                && p.iter().zip(&texts).all(|(c, t)| match c {
                    TokenConstraint::Text(x) => x == t,
                    TokenConstraint::Lower(x) => fold(x) == fold(t),
                    TokenConstraint::Regex(r) => Regex::new(&format!("^(?:{r})$"))
                        .map(|re| re.is_match(t))
                        .unwrap_or(false),
                    TokenConstraint::Wildcard => true,
                })
        }
        MatchForm::Regex(r) => {
            let Ok(re) = Regex::new(r) else { return false };
            let toks = doc.tokens();
            let (cs, ce) = (toks[start].start_char, toks[end - 1].end_char);
            let Ok(slice) = doc.char_slice(cs, ce) else {
                return false;
            };
            let last_start = toks[end - 1].start_char - cs;
            let first_end = toks[start].end_char - cs;
            let hit = re.find_iter(slice).any(|m| {
                let (ms, me) = (
                    slice[..m.start()].chars().count(),
                    slice[..m.end()].chars().count(),
                );
                ms < first_end && me > last_start
            });
            hit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forms(list: &[MatchForm]) -> PhraseMatcher {
        PhraseMatcher::compile(list.iter().map(|f| ("r", f)), &TokenizerRules::default()).unwrap()
    }

    #[test]
    fn literal_matches_case_insensitively_across_whitespace() {
        let m = forms(&[MatchForm::Literal("Chest Pain".into())]);
        let doc = tokenize("CHEST   pain and chest", &TokenizerRules::default());
        assert_eq!(
            m.find(&doc),
            [RawMatch {
                start: 0,
                end: 2,
                rule: 0
            }]
        );
    }

    #[test]
    fn pattern_constraints() {
        let m = forms(&[MatchForm::Pattern(vec![
            TokenConstraint::Lower("bp".into()),
            TokenConstraint::Regex(r"\d+/\d+".into()),
        ])]);
        let doc = tokenize("Bp 120/80, BP high", &TokenizerRules::default());
        assert_eq!(
            m.find(&doc),
            [RawMatch {
                start: 0,
                end: 2,
                rule: 0
            }]
        );
        let m = forms(&[MatchForm::Pattern(vec![
            TokenConstraint::Text("no".into()),
            TokenConstraint::Wildcard,
        ])]);
        let doc = tokenize("No cough no fever", &TokenizerRules::default());
        assert_eq!(
            m.find(&doc),
            [RawMatch {
                start: 2,
                end: 4,
                rule: 0
            }]
        );
    }

    #[test]
    fn regex_leftmost_longest() {
        let m = forms(&[MatchForm::Regex("a|ab|abc".into())]);
        let doc = tokenize("xx abcd abc", &TokenizerRules::default());
        // "abcd" is one token, the match "abc" expands to it
        assert_eq!(
            m.find(&doc),
            [
                RawMatch {
                    start: 1,
                    end: 2,
                    rule: 0
                },
                RawMatch {
                    start: 2,
                    end: 3,
                    rule: 0
                }
            ]
        );
        let re = CompiledRegex::new("a|ab|abc").unwrap();
        assert_eq!(re.find_all("xx abcd abc"), [(3, 6), (8, 11)]);
        let re = CompiledRegex::new("b*").unwrap();
        assert_eq!(re.find_all("abbc"), [(1, 3)]);
    }

    #[test]
    fn regex_crosses_tokens() {
        let m = forms(&[MatchForm::Regex(
            r"fracture of (the )?(left|right) \w+".into(),
        )]);
        let doc = tokenize("fracture of the left femur", &TokenizerRules::default());
        assert_eq!(
            m.find(&doc),
            [RawMatch {
                start: 0,
                end: 5,
                rule: 0
            }]
        );
        assert!(span_satisfies(&doc, 0, 5, &m_form()));
    }

    fn m_form() -> MatchForm {
        MatchForm::Regex(r"fracture of (the )?(left|right) \w+".into())
    }

    #[test]
    fn bad_regex_names_rule() {
        let f = MatchForm::Regex("(".into());
        let err =
            PhraseMatcher::compile([("bad_one", &f)], &TokenizerRules::default()).unwrap_err();
        assert!(err.to_string().contains("bad_one"));
        let f = MatchForm::Pattern(vec![TokenConstraint::Regex("[".into())]);
        assert!(PhraseMatcher::compile([("p", &f)], &TokenizerRules::default()).is_err());
    }

    #[test]
    fn constraint_json() {
        let c: Vec<TokenConstraint> =
            serde_json::from_str(r#"[{"text":"a"},{"lower":"b"},{"regex":"c"},{"wildcard":true}]"#)
                .unwrap();
        assert_eq!(
            c,
            [
                TokenConstraint::Text("a".into()),
                TokenConstraint::Lower("b".into()),
                TokenConstraint::Regex("c".into()),
                TokenConstraint::Wildcard
            ]
        );
        assert!(serde_json::from_str::<TokenConstraint>(r#"{"text":"a","lower":"b"}"#).is_err());
        assert!(serde_json::from_str::<TokenConstraint>(r#"{}"#).is_err());
    }

    #[test]
    fn unicode_regex_offsets() {
        let m = forms(&[MatchForm::Regex("élevée".into())]);
        let doc = tokenize("fièvre élevée", &TokenizerRules::default());
        assert_eq!(
            m.find(&doc),
            [RawMatch {
                start: 1,
                end: 2,
                rule: 0
            }]
        );
    }
}
