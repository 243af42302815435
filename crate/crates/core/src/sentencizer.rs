//! Rule-based sentence segmentation with first-character rule dispatch.
//!
//! Rules are short character-class patterns. Every match casts a vote at its
//! anchor, the boundary just before the anchor character:
//!
//! * `end` votes split the text there;
//! * `begin` votes keep the current sentence going and cancel `end` votes of
//!   lower or equal priority at the same anchor (abbreviation guards such as
//!   `Dr.`).
//!
//! Independently of the rules, a whitespace stretch holding a blank line
//! always closes the sentence. Boundaries falling inside a token are moved to
//! the end of that token.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::docmodel::{Document, Span};
use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../data/sentence_rules.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharClass {
    Digit,
    Upper,
    Lower,
    /// Whitespace other than a newline.
    Blank,
    Newline,
    Any,
}

impl CharClass {
    pub const ALL: [CharClass; 6] = [
        CharClass::Digit,
        CharClass::Upper,
        CharClass::Lower,
        CharClass::Blank,
        CharClass::Newline,
        CharClass::Any,
    ];

    pub fn matches(self, c: char) -> bool {
        match self {
            CharClass::Digit => c.is_numeric(),
            CharClass::Upper => c.is_uppercase(),
            CharClass::Lower => c.is_lowercase(),
            CharClass::Blank => c.is_whitespace() && c != '\n',
            CharClass::Newline => c == '\n',
            CharClass::Any => true,
        }
    }

    fn escape(self) -> &'static str {
        match self {
            CharClass::Digit => "\\d",
            CharClass::Upper => "\\u",
            CharClass::Lower => "\\l",
            CharClass::Blank => "\\s",
            CharClass::Newline => "\\n",
            CharClass::Any => "\\a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternElem {
    Literal(char),
    Class(CharClass),
}

impl PatternElem {
    pub fn matches(self, c: char) -> bool {
        match self {
            PatternElem::Literal(l) => l == c,
            PatternElem::Class(cls) => cls.matches(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Begin,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryRule {
    pub id: String,
    pub kind: BoundaryKind,
    pub pattern: Vec<PatternElem>,
    pub anchor_offset: usize,
    pub priority: i64,
}

impl BoundaryRule {
    pub fn new(
        id: impl Into<String>,
        kind: BoundaryKind,
        pattern: &str,
        anchor_offset: usize,
        priority: i64,
    ) -> Result<Self> {
        let id = id.into();
        let pattern = parse_pattern(pattern).map_err(|m| Error::rule(&id, m))?;
        let rule = BoundaryRule {
            id,
            kind,
            pattern,
            anchor_offset,
            priority,
        };
        rule.validate()?;
        Ok(rule)
    }

    fn validate(&self) -> Result<()> {
        if self.pattern.is_empty() {
            return Err(Error::rule(&self.id, "pattern is empty"));
        }
        if self.anchor_offset >= self.pattern.len() {
            return Err(Error::rule(
                &self.id,
                format!(
                    "anchor offset {} outside pattern of length {}",
                    self.anchor_offset,
                    self.pattern.len()
                ),
            ));
        }
        Ok(())
    }

    /// Whether the pattern matches `chars` starting at `pos`.
    pub fn matches_at(&self, chars: &[char], pos: usize) -> bool {
        pos + self.pattern.len() <= chars.len()
            && self
                .pattern
                .iter()
                .zip(&chars[pos..])
                .all(|(elem, &c)| elem.matches(c))
    }
}

impl fmt::Display for BoundaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BoundaryKind::Begin => "begin",
            BoundaryKind::End => "end",
        };
        write!(f, "{}\t{}\t", self.id, kind)?;
        for elem in &self.pattern {
            match elem {
                PatternElem::Literal('\\') => f.write_str("\\\\")?,
                PatternElem::Literal('\t') => f.write_str("\\t")?,
                PatternElem::Literal(c) => write!(f, "{c}")?,
                PatternElem::Class(cls) => f.write_str(cls.escape())?,
            }
        }
        write!(f, "\t{}\t{}", self.anchor_offset, self.priority)
    }
}

fn parse_pattern(src: &str) -> std::result::Result<Vec<PatternElem>, String> {
    let mut out = Vec::new();
    let mut chars = src.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(PatternElem::Literal(c));
            continue;
        }
        let elem = match chars.next() {
            Some('d') => PatternElem::Class(CharClass::Digit),
            Some('u') => PatternElem::Class(CharClass::Upper),
            Some('l') => PatternElem::Class(CharClass::Lower),
            Some('s') => PatternElem::Class(CharClass::Blank),
            Some('n') => PatternElem::Class(CharClass::Newline),
            Some('a') => PatternElem::Class(CharClass::Any),
            Some('t') => PatternElem::Literal('\t'),
            Some('\\') => PatternElem::Literal('\\'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        };
        out.push(elem);
    }
    Ok(out)
}

/// Compiled rules plus the dispatch table keyed on each rule's first element.
#[derive(Debug, Clone)]
pub struct BoundaryRuleSet {
    rules: Vec<BoundaryRule>,
    dispatch: HashMap<PatternElem, Vec<usize>>,
}

impl Default for BoundaryRuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES, "<default sentence rules>")
            .expect("bundled sentence rules are valid")
    }
}

impl BoundaryRuleSet {
    pub fn new(rules: Vec<BoundaryRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dispatch: HashMap<PatternElem, Vec<usize>> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            rule.validate()?;
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::DuplicateRule(rule.id.clone()));
            }
            dispatch.entry(rule.pattern[0]).or_default().push(i);
        }
        Ok(BoundaryRuleSet { rules, dispatch })
    }

    /// Parses the tab-separated rule format.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in src.lines().enumerate() {
            let line_no = Some(n + 1);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(Error::parse(origin, line_no, "empty rule id"));
            }
            let with_rule =
                |msg: String| Error::parse(origin, line_no, format!("rule `{id}`: {msg}"));
            let kind = match fields[1].trim() {
                "begin" => BoundaryKind::Begin,
                "end" => BoundaryKind::End,
                other => return Err(with_rule(format!("unknown kind `{other}`"))),
            };
            let anchor_offset = fields[3]
                .trim()
                .parse()
                .map_err(|_| with_rule(format!("bad anchor offset `{}`", fields[3])))?;
            let priority = fields[4]
                .trim()
                .parse()
                .map_err(|_| with_rule(format!("bad priority `{}`", fields[4])))?;
            let rule = BoundaryRule::new(id, kind, fields[2], anchor_offset, priority)
                .map_err(|e| with_rule(rule_message(e)))?;
            rules.push(rule);
        }
        Self::new(rules).map_err(|e| match e {
            Error::DuplicateRule(id) => {
                Error::parse(origin, None, format!("duplicate rule id `{id}`"))
            }
            other => other,
        })
    }

    pub fn rules(&self) -> &[BoundaryRule] {
        &self.rules
    }

    pub fn dispatch(&self) -> &HashMap<PatternElem, Vec<usize>> {
        &self.dispatch
    }

    /// Rules whose first pattern element accepts `c`.
    fn candidates(&self, c: char) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(PatternElem::Literal(c))
            .chain(
                CharClass::ALL
                    .into_iter()
                    .filter(move |cls| cls.matches(c))
                    .map(PatternElem::Class),
            )
            .filter_map(|key| self.dispatch.get(&key))
            .flatten()
            .copied()
    }
}

fn rule_message(e: Error) -> String {
    match e {
        Error::Rule { message, .. } => message,
        other => other.to_string(),
    }
}

pub fn load_boundary_rules(path: impl AsRef<Path>) -> Result<BoundaryRuleSet> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BoundaryRuleSet::parse(&src, &path.display().to_string())
}

#[derive(Default, Clone, Copy)]
struct Votes {
    end: Option<i64>,
    begin: Option<i64>,
}

impl Votes {
    fn cast(&mut self, kind: BoundaryKind, priority: i64) {
        let slot = match kind {
            BoundaryKind::Begin => &mut self.begin,
            BoundaryKind::End => &mut self.end,
        };
        *slot = Some(slot.map_or(priority, |p| p.max(priority)));
    }

    fn splits(&self) -> bool {
        match (self.end, self.begin) {
            (Some(e), Some(b)) => e > b,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// Character positions (boundary before the char) where the rules split.
pub fn rule_boundaries(text: &str, rules: &BoundaryRuleSet) -> Vec<usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut votes = vec![Votes::default(); chars.len()];
    for (pos, &c) in chars.iter().enumerate() {
        for idx in rules.candidates(c) {
            let rule = &rules.rules[idx];
            if rule.matches_at(&chars, pos) {
                votes[pos + rule.anchor_offset].cast(rule.kind, rule.priority);
            }
        }
    }
    votes
        .iter()
        .enumerate()
        .filter_map(|(pos, v)| v.splits().then_some(pos))
        .collect()
}

/// Turns split positions into a token partition. Blank-line gaps always split.
pub fn sentences_from_boundaries(doc: &Document, boundaries: &[usize]) -> Vec<Span> {
    let tokens = doc.tokens();
    let n = tokens.len();
    let mut starts = vec![false; n];
    for &b in boundaries {
        let k = tokens.partition_point(|t| t.start_char < b);
        if k > 0 && k < n {
            starts[k] = true;
        }
    }
    for k in 1..n {
        if tokens[k - 1].trailing_ws.matches('\n').count() >= 2 {
            starts[k] = true;
        }
    }
    if n == 0 {
        return Vec::new();
    }
    let cuts: Vec<usize> = (1..n)
        .filter(|&k| starts[k])
        .chain(std::iter::once(n))
        .collect();
    let mut begin = 0;
    cuts.into_iter()
        .map(|end| {
            let span = Span::new(begin, end, "sentence");
            begin = end;
            span
        })
        .collect()
}

/// Fills `doc.sentences` with a token partition.
pub fn segment(mut doc: Document, rules: &BoundaryRuleSet) -> Document {
    let boundaries = rule_boundaries(doc.text(), rules);
    doc.sentences = sentences_from_boundaries(&doc, &boundaries);
    doc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{tokenize, TokenizerRules};

    fn sentences(text: &str) -> Vec<String> {
        let doc = segment(
            tokenize(text, &TokenizerRules::default()),
            &BoundaryRuleSet::default(),
        );
        doc.sentences
            .iter()
            .map(|s| doc.span_text(s).unwrap().to_string())
            .collect()
    }

    #[test]
    fn period_space_upper() {
        assert_eq!(
            sentences("Pt denies CP. SOB noted."),
            ["Pt denies CP.", "SOB noted."]
        );
    }

    #[test]
    fn empty_text() {
        assert!(sentences("").is_empty());
        assert!(sentences("  \n ").is_empty());
    }

    #[test]
    fn list_lines() {
        assert_eq!(
            sentences("meds:\n- aspirin\n- lisinopril"),
            ["meds:", "- aspirin", "- lisinopril"]
        );
    }

    #[test]
    fn title_abbreviation_not_split() {
        assert_eq!(
            sentences("Seen by Dr. Smith today. Stable."),
            ["Seen by Dr. Smith today.", "Stable."]
        );
    }

    #[test]
    fn blank_line_always_splits() {
        assert_eq!(sentences("cough and\n  \nfever"), ["cough and", "fever"]);
    }

    #[test]
    fn no_match_single_sentence() {
        assert_eq!(sentences("cough and fever"), ["cough and fever"]);
    }

    #[test]
    fn boundary_inside_token_snaps_outward() {
        let rules =
            BoundaryRuleSet::new(vec![
                BoundaryRule::new("mid", BoundaryKind::End, "b", 0, 1).unwrap()
            ])
            .unwrap();
        let doc = segment(tokenize("aab c", &TokenizerRules::default()), &rules);
        let spans: Vec<_> = doc.sentences.iter().map(|s| s.range()).collect();
        assert_eq!(spans, [0..1, 1..2]);
    }

    #[test]
    fn begin_priority_tie_keeps_sentence() {
        let rules = BoundaryRuleSet::new(vec![
            BoundaryRule::new("e", BoundaryKind::End, ".\\s", 1, 3).unwrap(),
            BoundaryRule::new("b", BoundaryKind::Begin, "x.\\s", 2, 3).unwrap(),
        ])
        .unwrap();
        let doc = segment(tokenize("ax. b. c", &TokenizerRules::default()), &rules);
        assert_eq!(doc.sentences.len(), 2);
        let rules = BoundaryRuleSet::new(vec![
            BoundaryRule::new("e", BoundaryKind::End, ".\\s", 1, 4).unwrap(),
            BoundaryRule::new("b", BoundaryKind::Begin, "x.\\s", 2, 3).unwrap(),
        ])
        .unwrap();
        let doc = segment(tokenize("ax. b. c", &TokenizerRules::default()), &rules);
        assert_eq!(doc.sentences.len(), 3);
    }

    #[test]
    fn default_rules_have_period_end_rule() {
        let set = BoundaryRuleSet::default();
        assert!(set
            .rules()
            .iter()
            .any(|r| r.kind == BoundaryKind::End && r.pattern[0] == PatternElem::Literal('.')));
        let total: usize = set.dispatch().values().map(Vec::len).sum();
        assert_eq!(total, set.rules().len());
    }

    #[test]
    fn parse_errors() {
        let err = BoundaryRuleSet::parse("empty\tend\t\t0\t1\n", "t.tsv").unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        assert!(err.to_string().contains("t.tsv:1"), "{err}");
        let err =
            BoundaryRuleSet::parse("a\tend\t.\t0\t1\na\tend\t!\t0\t1\n", "t.tsv").unwrap_err();
        assert!(err.to_string().contains("duplicate rule id `a`"), "{err}");
        let err = BoundaryRuleSet::parse("# c\n\nx\tend\t.\t0\n", "t.tsv").unwrap_err();
        assert!(err.to_string().contains("t.tsv:3"), "{err}");
        assert!(BoundaryRuleSet::parse("x\tmiddle\t.\t0\t1", "t").is_err());
        assert!(BoundaryRuleSet::parse("x\tend\t.\\q\t0\t1", "t").is_err());
        assert!(BoundaryRuleSet::parse("x\tend\t.\t1\t1", "t").is_err());
    }

    #[test]
    fn display_round_trips() {
        for rule in BoundaryRuleSet::default().rules() {
            let again = BoundaryRuleSet::parse(&rule.to_string(), "x").unwrap();
            assert_eq!(&again.rules()[0], rule);
        }
    }
}
