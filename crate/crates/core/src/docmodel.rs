//! Immutable source text plus layered, token-aligned annotations.
//!
//! All character offsets are counted in Unicode scalar values and all ranges
//! are end-exclusive. The text and the token layer are fixed once a
//! [`Document`] exists; later stages only fill in the annotation layers.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the pre-registered boolean assertion attributes on entities.
pub const ASSERTION_ATTRS: [&str; 5] = [
    "is_negated",
    "is_historical",
    "is_hypothetical",
    "is_uncertain",
    "is_family",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Str(String),
}

impl AttrValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(b) => Some(*b),
            AttrValue::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            AttrValue::Bool(_) => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Str(s) => f.write_str(s),
        }
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

/// Open attribute record. Ordered so that serialized output is stable.
pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub start_char: usize,
    pub end_char: usize,
    /// Exact whitespace between this token and the next one.
    pub trailing_ws: String,
}

impl Token {
    pub fn len_chars(&self) -> usize {
        self.end_char - self.start_char
    }
}

/// A half-open token interval with a label and attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_token: usize,
    pub end_token: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: Attrs,
}

impl Span {
    pub fn new(start_token: usize, end_token: usize, label: impl Into<String>) -> Self {
        Span {
            start_token,
            end_token,
            label: label.into(),
            attrs: Attrs::new(),
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start_token..self.end_token
    }

    pub fn len(&self) -> usize {
        self.end_token - self.start_token
    }

    pub fn is_empty(&self) -> bool {
        self.end_token <= self.start_token
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start_token < other.end_token && other.start_token < self.end_token
    }

    pub fn intersects_range(&self, range: &Range<usize>) -> bool {
        self.start_token < range.end && range.start < self.end_token
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start_token <= other.start_token && other.end_token <= self.end_token
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub span: Span,
    pub category: String,
    pub cui: Option<String>,
    pub similarity: Option<f64>,
    pub is_negated: bool,
    pub is_historical: bool,
    pub is_hypothetical: bool,
    pub is_uncertain: bool,
    pub is_family: bool,
    pub section_category: Option<String>,
}

impl Entity {
    pub fn new(span: Span, category: impl Into<String>) -> Self {
        Entity {
            span,
            category: category.into(),
            cui: None,
            similarity: None,
            is_negated: false,
            is_historical: false,
            is_hypothetical: false,
            is_uncertain: false,
            is_family: false,
            section_category: None,
        }
    }

    fn flag_mut(&mut self, name: &str) -> Option<&mut bool> {
        match name {
            "is_negated" => Some(&mut self.is_negated),
            "is_historical" => Some(&mut self.is_historical),
            "is_hypothetical" => Some(&mut self.is_hypothetical),
            "is_uncertain" => Some(&mut self.is_uncertain),
            "is_family" => Some(&mut self.is_family),
            _ => None,
        }
    }

    /// Reads an attribute, pre-registered or custom.
    pub fn attr(&self, name: &str) -> Option<AttrValue> {
        let flag = match name {
            "is_negated" => self.is_negated,
            "is_historical" => self.is_historical,
            "is_hypothetical" => self.is_hypothetical,
            "is_uncertain" => self.is_uncertain,
            "is_family" => self.is_family,
            _ => return self.span.attrs.get(name).cloned(),
        };
        Some(AttrValue::Bool(flag))
    }

    /// True when the attribute is set to boolean true.
    pub fn is_set(&self, name: &str) -> bool {
        self.attr(name).and_then(|v| v.as_bool()).unwrap_or(false)
    }

    /// Writes an attribute. Booleans named in [`ASSERTION_ATTRS`] go to the
    /// dedicated fields; a string value for one of those names is rejected.
    pub fn set_attr(&mut self, name: &str, value: AttrValue) -> Result<()> {
        match (self.flag_mut(name), value) {
            (Some(flag), AttrValue::Bool(b)) => {
                *flag = b;
                Ok(())
            }
            (Some(_), AttrValue::Str(s)) => Err(Error::Document(format!(
                "attribute `{name}` is boolean, got string `{s}`"
            ))),
            (None, value) => {
                self.span.attrs.insert(name.to_string(), value);
                Ok(())
            }
        }
    }

    /// Custom (non pre-registered) attributes.
    pub fn extras(&self) -> &Attrs {
        &self.span.attrs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// `None` for the implicit section preceding the first title.
    pub category: Option<String>,
    pub title_span: Option<Span>,
    /// Tokens after the title up to the next section. Absent when a title is
    /// immediately followed by another title or the end of the document.
    pub body_span: Option<Span>,
    /// Full extent (title plus body). Extents partition the token sequence.
    pub span: Span,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Attribute overrides applied to entities inside this section.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: Attrs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
    Terminate,
    Pseudo,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "FORWARD",
            Direction::Backward => "BACKWARD",
            Direction::Bidirectional => "BIDIRECTIONAL",
            Direction::Terminate => "TERMINATE",
            Direction::Pseudo => "PSEUDO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FORWARD" => Some(Direction::Forward),
            "BACKWARD" => Some(Direction::Backward),
            "BIDIRECTIONAL" => Some(Direction::Bidirectional),
            "TERMINATE" => Some(Direction::Terminate),
            "PSEUDO" => Some(Direction::Pseudo),
            _ => None,
        }
    }

    /// Whether modifiers of this direction assert attributes on entities.
    pub fn is_asserting(&self) -> bool {
        matches!(
            self,
            Direction::Forward | Direction::Backward | Direction::Bidirectional
        )
    }
}

/// Token ranges a modifier reaches on each side of itself. Both ranges lie
/// inside the enclosing sentence and exclude the modifier's own tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub before: Range<usize>,
    pub after: Range<usize>,
}

impl Scope {
    pub fn empty_at(pos: usize) -> Self {
        Scope {
            before: pos..pos,
            after: pos..pos,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.before.is_empty() && self.after.is_empty()
    }

    pub fn intersects(&self, span: &Span) -> bool {
        (!self.before.is_empty() && span.intersects_range(&self.before))
            || (!self.after.is_empty() && span.intersects_range(&self.after))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modifier {
    pub span: Span,
    pub rule_id: String,
    pub category: String,
    pub direction: Direction,
    pub scope: Scope,
    /// Attribute set true on linked entities.
    pub asserts: Option<String>,
}

/// How [`Document::char_span`] snaps a character range to tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Smallest token span covering the range.
    Expand,
    /// Largest token span inside the range.
    Contract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    text: String,
    /// Byte offset of every character, plus `text.len()` at the end.
    char_bytes: Vec<usize>,
    tokens: Vec<Token>,
    pub sentences: Vec<Span>,
    pub sections: Vec<Section>,
    pub entities: Vec<Entity>,
    pub modifiers: Vec<Modifier>,
    /// `(modifier index, entity index)` pairs.
    pub links: Vec<(usize, usize)>,
}

impl Document {
    /// Builds a document from text and a token layer, checking that the
    /// tokens are ordered, non-empty, whitespace-free and that their
    /// `trailing_ws` fields account for every remaining character.
    pub fn from_tokens(text: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        let text = text.into();
        let mut char_bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        char_bytes.push(text.len());
        let doc = Document {
            text,
            char_bytes,
            tokens,
            sentences: Vec::new(),
            sections: Vec::new(),
            entities: Vec::new(),
            modifiers: Vec::new(),
            links: Vec::new(),
        };
        doc.check_tokens()?;
        Ok(doc)
    }

    fn check_tokens(&self) -> Result<()> {
        let chars: Vec<char> = self.text.chars().collect();
        let bad = |msg: String| Err(Error::Document(msg));
        let mut cursor = 0;
        if let Some(first) = self.tokens.first() {
            if chars[..first.start_char.min(chars.len())]
                .iter()
                .any(|c| !c.is_whitespace())
            {
                return bad("text before the first token is not whitespace".into());
            }
            cursor = first.start_char;
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.start_char != cursor {
                return bad(format!(
                    "token {i} does not start where the previous one ended"
                ));
            }
            if tok.start_char >= tok.end_char || tok.end_char > chars.len() {
                return bad(format!("token {i} has an invalid character range"));
            }
            if chars[tok.start_char..tok.end_char]
                .iter()
                .any(|c| c.is_whitespace())
            {
                return bad(format!("token {i} contains whitespace"));
            }
            let ws_len = tok.trailing_ws.chars().count();
            let ws_end = tok.end_char + ws_len;
            if ws_end > chars.len()
                || chars[tok.end_char..ws_end]
                    .iter()
                    .copied()
                    .ne(tok.trailing_ws.chars())
                || !tok.trailing_ws.chars().all(char::is_whitespace)
            {
                return bad(format!(
                    "token {i} trailing whitespace does not match the text"
                ));
            }
            cursor = ws_end;
        }
        if !self.tokens.is_empty() && cursor != chars.len() {
            return bad("tokens do not cover the end of the text".into());
        }
        if self.tokens.is_empty() && chars.iter().any(|c| !c.is_whitespace()) {
            return bad("non-whitespace text without tokens".into());
        }
        Ok(())
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len_chars(&self) -> usize {
        self.char_bytes.len() - 1
    }

    /// Substring between two character offsets.
    pub fn char_slice(&self, start_char: usize, end_char: usize) -> Result<&str> {
        if start_char > end_char || end_char > self.len_chars() {
            return Err(Error::Range {
                start: start_char,
                end: end_char,
                len: self.len_chars(),
            });
        }
        Ok(&self.text[self.char_bytes[start_char]..self.char_bytes[end_char]])
    }

    /// Character offset of a byte offset that falls on a char boundary.
    pub fn byte_to_char(&self, byte: usize) -> usize {
        self.char_bytes.partition_point(|&b| b < byte)
    }

    pub fn token_text(&self, index: usize) -> &str {
        let tok = &self.tokens[index];
        &self.text[self.char_bytes[tok.start_char]..self.char_bytes[tok.end_char]]
    }

    /// Whitespace-preserving reconstruction from the token layer.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        if let Some(first) = self.tokens.first() {
            out.push_str(&self.text[..self.char_bytes[first.start_char]]);
        } else {
            out.push_str(&self.text);
        }
        for i in 0..self.tokens.len() {
            out.push_str(self.token_text(i));
            out.push_str(&self.tokens[i].trailing_ws);
        }
        out
    }

    pub fn check_span(&self, span: &Span) -> Result<()> {
        if span.start_token >= span.end_token || span.end_token > self.tokens.len() {
            return Err(Error::TokenRange {
                start: span.start_token,
                end: span.end_token,
                len: self.tokens.len(),
            });
        }
        Ok(())
    }

    /// Character range `[start, end)` covered by a span.
    pub fn span_chars(&self, span: &Span) -> Result<(usize, usize)> {
        self.check_span(span)?;
        Ok((
            self.tokens[span.start_token].start_char,
            self.tokens[span.end_token - 1].end_char,
        ))
    }

    /// Exact source text of a span, interior whitespace included and the
    /// last token's trailing whitespace excluded.
    pub fn span_text(&self, span: &Span) -> Result<&str> {
        let (s, e) = self.span_chars(span)?;
        self.char_slice(s, e)
    }

    /// Aligns a character range to token boundaries. Returns `None` when no
    /// token qualifies (a whitespace-only range in expand mode, or a range
    /// holding no whole token in contract mode).
    pub fn char_span(
        &self,
        start_char: usize,
        end_char: usize,
        mode: AlignMode,
    ) -> Result<Option<Span>> {
        if start_char > end_char || end_char > self.len_chars() {
            return Err(Error::Range {
                start: start_char,
                end: end_char,
                len: self.len_chars(),
            });
        }
        let (first, last) = match mode {
            AlignMode::Expand => (
                self.tokens.partition_point(|t| t.end_char <= start_char),
                self.tokens.partition_point(|t| t.start_char < end_char),
            ),
            AlignMode::Contract => (
                self.tokens.partition_point(|t| t.start_char < start_char),
                self.tokens.partition_point(|t| t.end_char <= end_char),
            ),
        };
        if first < last {
            Ok(Some(Span::new(first, last, "")))
        } else {
            Ok(None)
        }
    }

    /// Index of the sentence holding a token.
    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        let i = self.sentences.partition_point(|s| s.end_token <= token);
        (i < self.sentences.len() && self.sentences[i].start_token <= token).then_some(i)
    }

    /// Index of the section whose extent holds a token.
    pub fn section_of(&self, token: usize) -> Option<usize> {
        let i = self.sections.partition_point(|s| s.span.end_token <= token);
        (i < self.sections.len() && self.sections[i].span.start_token <= token).then_some(i)
    }

    /// Hash of the immutable layers (text and tokens).
    pub fn base_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.text.hash(&mut h);
        self.tokens.hash(&mut h);
        h.finish()
    }
}
