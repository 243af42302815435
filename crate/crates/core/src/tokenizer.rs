//! Whitespace-preserving tokenizer tuned for clinical shorthand.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::docmodel::{Document, Token};
use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../data/tokenizer.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerRules {
    /// Never split; matched case-insensitively, longest first.
    #[serde(default)]
    pub abbreviations: Vec<String>,
    /// Always emitted as standalone tokens.
    #[serde(default)]
    pub split_chars: BTreeSet<char>,
    /// Punctuation kept inside a token when flanked by alphanumerics.
    #[serde(default)]
    pub preserve_infix: Vec<String>,
    #[serde(skip)]
    compiled: Compiled,
}

#[derive(Debug, Clone, Default)]
struct Compiled {
    abbreviations: Vec<Vec<char>>,
    infixes: Vec<Vec<char>>,
}

impl Default for TokenizerRules {
    fn default() -> Self {
        Self::from_json(DEFAULT_RULES, "<default tokenizer rules>")
            .expect("bundled tokenizer rules are valid")
    }
}

fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Sorts patterns longest first; the stable sort keeps file order for ties.
fn by_length(patterns: &[String], fold_case: bool) -> Vec<Vec<char>> {
    let mut out: Vec<Vec<char>> = patterns
        .iter()
        .map(|p| {
            p.chars()
                .map(|c| if fold_case { fold(c) } else { c })
                .collect()
        })
        .collect();
    out.sort_by_key(|p| std::cmp::Reverse(p.len()));
    out
}

impl TokenizerRules {
    pub fn new(
        abbreviations: Vec<String>,
        split_chars: impl IntoIterator<Item = char>,
        preserve_infix: Vec<String>,
    ) -> Result<Self> {
        let mut rules = TokenizerRules {
            abbreviations,
            split_chars: split_chars.into_iter().collect(),
            preserve_infix,
            compiled: Compiled::default(),
        };
        rules.compile("<tokenizer rules>")?;
        Ok(rules)
    }

    pub fn from_json(json: &str, origin: &str) -> Result<Self> {
        let mut rules: TokenizerRules = serde_json::from_str(json)
            .map_err(|e| Error::parse(origin, Some(e.line()), e.to_string()))?;
        rules.compile(origin)?;
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json, &path.display().to_string())
    }

    fn compile(&mut self, origin: &str) -> Result<()> {
        for a in &self.abbreviations {
            if a.is_empty() || a.chars().any(char::is_whitespace) {
                return Err(Error::parse(
                    origin,
                    None,
                    format!("abbreviation {a:?} is empty or contains whitespace"),
                ));
            }
        }
        if let Some(c) = self
            .split_chars
            .iter()
            .find(|c| c.is_alphanumeric() || c.is_whitespace())
        {
            return Err(Error::parse(
                origin,
                None,
                format!("split character {c:?} must be punctuation"),
            ));
        }
        for p in &self.preserve_infix {
            if p.is_empty() || p.chars().any(|c| c.is_whitespace() || c.is_alphanumeric()) {
                return Err(Error::parse(
                    origin,
                    None,
                    format!("infix {p:?} must be non-empty punctuation"),
                ));
            }
        }
        self.compiled = Compiled {
            abbreviations: by_length(&self.abbreviations, true),
            infixes: by_length(&self.preserve_infix, false),
        };
        Ok(())
    }

    /// Length of the longest abbreviation matching at `i`, if any.
    fn abbreviation_at(&self, chars: &[char], i: usize, end: usize) -> Option<usize> {
        if i > 0 && chars[i - 1].is_alphanumeric() {
            return None;
        }
        self.compiled.abbreviations.iter().find_map(|abbr| {
            let j = i + abbr.len();
            let hit = j <= end
                && chars[i..j].iter().zip(abbr).all(|(&c, &a)| fold(c) == a)
                && (j == end || !chars[j].is_alphanumeric());
            hit.then_some(abbr.len())
        })
    }

    fn infix_at(&self, chars: &[char], i: usize, end: usize) -> Option<usize> {
        self.compiled.infixes.iter().find_map(|infix| {
            let j = i + infix.len();
            let hit = j < end
                && chars[i..j] == infix[..]
                && chars[j].is_alphanumeric()
                && !chars[i..j].iter().any(|c| self.split_chars.contains(c));
            hit.then_some(infix.len())
        })
    }

    /// Splits one whitespace-free chunk `chars[start..end]` into token ranges.
    fn split_chunk(&self, chars: &[char], start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
        let mut i = start;
        while i < end {
            if let Some(len) = self.abbreviation_at(chars, i, end) {
                out.push((i, i + len));
                i += len;
                continue;
            }
            if !chars[i].is_alphanumeric() {
                // split characters and stray punctuation both stand alone
                out.push((i, i + 1));
                i += 1;
                continue;
            }
            let mut j = i;
            loop {
                while j < end && chars[j].is_alphanumeric() {
                    j += 1;
                }
                match (j < end).then(|| self.infix_at(chars, j, end)).flatten() {
                    Some(len) => j += len,
                    None => break,
                }
            }
            out.push((i, j));
            i = j;
        }
    }
}

/// Tokenizes `text`. Total: every input, including the empty string, yields a
/// document whose tokens reconstruct the text exactly.
pub fn tokenize(text: &str, rules: &TokenizerRules) -> Document {
    let chars: Vec<char> = text.chars().collect();
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        rules.split_chunk(&chars, start, i, &mut ranges);
    }

    let tokens = ranges
        .iter()
        .enumerate()
        .map(|(k, &(s, e))| {
            let ws_end = ranges.get(k + 1).map_or(chars.len(), |next| next.0);
            Token {
                start_char: s,
                end_char: e,
                trailing_ws: chars[e..ws_end].iter().collect(),
            }
        })
        .collect();
    Document::from_tokens(text, tokens).expect("tokenizer output satisfies token invariants")
}

pub fn reconstruct(doc: &Document) -> String {
    doc.reconstruct()
}
