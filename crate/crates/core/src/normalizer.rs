//! Approximate dictionary matching over character n-gram sets.
//!
//! Terms are normalised (lowercase, collapsed whitespace), padded with
//! `n - 1` `#` markers on each side and reduced to their set of character
//! n-grams. The index groups entries by feature-set size; a query only visits
//! size buckets where the threshold is reachable and only scores entries
//! sharing enough features with it. Results always equal a full scan.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::docmodel::{AttrValue, Document, Entity, Span};
use crate::error::{Error, Result};

const DEFAULT_DICTIONARY: &str = include_str!("../data/toy_dictionary.tsv");
const PAD: char = '#';
const CACHE_MAGIC: &[u8; 8] = b"CLTXNGI\0";
pub const CACHE_VERSION: u32 = 1;
/// Slack for float bounds; the final threshold check is always exact.
const EPS: f64 = 1e-9;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "by", "for", "from", "had", "has", "have",
    "he", "her", "his", "in", "is", "it", "its", "no", "not", "of", "on", "or", "per", "she",
    "that", "the", "their", "this", "to", "was", "were", "with",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictEntry {
    pub term: String,
    pub cui: String,
    pub semtypes: Vec<String>,
}

impl DictEntry {
    pub fn new(term: &str, cui: &str, semtypes: &[&str]) -> Self {
        DictEntry {
            term: term.into(),
            cui: cui.into(),
            semtypes: semtypes.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Cosine,
    Jaccard,
    Dice,
    Overlap,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Cosine,
        Measure::Jaccard,
        Measure::Dice,
        Measure::Overlap,
    ];

    /// Similarity of feature sets of sizes `x` and `y` sharing `common` features.
    pub fn similarity(self, x: usize, y: usize, common: usize) -> f64 {
        let (x, y, c) = (x as f64, y as f64, common as f64);
        match self {
            Measure::Cosine => c / (x * y).sqrt(),
            Measure::Jaccard => c / (x + y - c),
            Measure::Dice => 2.0 * c / (x + y),
            Measure::Overlap => c / x.min(y),
        }
    }

    /// Inclusive range of entry sizes that can reach `threshold` against a
    /// query of `x` features.
    pub fn size_bounds(self, x: usize, threshold: f64) -> (usize, usize) {
        let xf = x as f64;
        let t = threshold;
        let (lo, hi) = match self {
            Measure::Cosine => (t * t * xf, xf / (t * t)),
            Measure::Jaccard => (t * xf, xf / t),
            Measure::Dice => (t * xf / (2.0 - t), (2.0 - t) * xf / t),
            Measure::Overlap => return (1, usize::MAX),
        };
        let lo = (lo - EPS).ceil().max(1.0) as usize;
        let hi = (hi + EPS).floor();
        let hi = if hi >= usize::MAX as f64 {
            usize::MAX
        } else {
            hi as usize
        };
        (lo, hi)
    }

    /// Smallest shared-feature count that can reach `threshold`.
    pub fn min_overlap(self, x: usize, y: usize, threshold: f64) -> usize {
        let (xf, yf, t) = (x as f64, y as f64, threshold);
        let alpha = match self {
            Measure::Cosine => t * (xf * yf).sqrt(),
            Measure::Jaccard => t * (xf + yf) / (1.0 + t),
            Measure::Dice => t * (xf + yf) / 2.0,
            Measure::Overlap => t * xf.min(yf),
        };
        ((alpha - EPS).ceil().max(1.0)) as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Cosine => "cosine",
            Measure::Jaccard => "jaccard",
            Measure::Dice => "dice",
            Measure::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Measure::Cosine),
            "jaccard" => Ok(Measure::Jaccard),
            "dice" => Ok(Measure::Dice),
            "overlap" => Ok(Measure::Overlap),
            other => Err(Error::Config(format!(
                "unknown similarity measure `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    pub threshold: f64,
    pub measure: Measure,
    /// Longest candidate span, in tokens.
    pub window: usize,
    /// Attach only the best concept; otherwise all matching CUIs are listed
    /// in the entity's `cuis` attribute.
    pub best_match_only: bool,
}

impl Default for NormalizerParams {
    fn default() -> Self {
        NormalizerParams {
            threshold: 0.7,
            measure: Measure::Jaccard,
            window: 6,
            best_match_only: true,
        }
    }
}

impl NormalizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "normalizer threshold {} must be in (0, 1]",
                self.threshold
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("normalizer window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Lowercases and collapses runs of whitespace to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sorted, distinct character n-grams of the padded, normalised string.
pub fn features(s: &str, n: usize) -> Vec<String> {
    let pad = std::iter::repeat_n(PAD, n - 1);
    let padded: Vec<char> = pad.clone().chain(normalize(s).chars()).chain(pad).collect();
    let mut grams: Vec<String> = padded.windows(n).map(|w| w.iter().collect()).collect();
    grams.sort_unstable();
    grams.dedup();
    grams
}

pub fn dictionary_hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn parse_dictionary(src: &str, origin: &str) -> Result<Vec<DictEntry>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::parse(
                origin,
                Some(i + 1),
                format!("expected term, cui, semtypes columns, found {}", cols.len()),
            ));
        }
        let term = cols[0].trim();
        let cui = cols[1].trim();
        if term.is_empty() || cui.is_empty() {
            return Err(Error::parse(origin, Some(i + 1), "empty term or cui"));
        }
        let semtypes = cols
            .get(2)
            .map(|s| {
                s.split('|')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        out.push(DictEntry {
            term: term.into(),
            cui: cui.into(),
            semtypes,
        });
    }
    Ok(out)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Vec<DictEntry>> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&src, &path.display().to_string())
}

pub fn default_dictionary() -> Vec<DictEntry> {
    parse_dictionary(DEFAULT_DICTIONARY, "<toy dictionary>").expect("bundled dictionary is valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub id: usize,
    pub entry: &'a DictEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramIndex {
    n: usize,
    entries: Vec<DictEntry>,
    vocab: HashMap<String, u32>,
    vocab_list: Vec<String>,
    /// Sorted feature ids per entry.
    entry_features: Vec<Vec<u32>>,
    /// Feature-set size -> feature id -> entry ids.
    buckets: BTreeMap<usize, HashMap<u32, Vec<u32>>>,
}

impl NgramIndex {
    pub fn build(entries: Vec<DictEntry>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dictionary(format!(
                "n-gram length {n} must be at least 2"
            )));
        }
        if entries.is_empty() {
            return Err(Error::Dictionary("no dictionary entries".into()));
        }
        if let Some((i, e)) = entries
            .iter()
            .enumerate()
            .find(|(_, e)| normalize(&e.term).is_empty() || e.cui.is_empty())
        {
            return Err(Error::Dictionary(format!(
                "entry {i} ({:?}, {:?}) has an empty term or cui",
                e.term, e.cui
            )));
        }
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut vocab_list = Vec::new();
        let mut entry_features = Vec::with_capacity(entries.len());
        for entry in &entries {
            let mut ids: Vec<u32> = features(&entry.term, n)
                .into_iter()
                .map(|g| {
                    *vocab.entry(g.clone()).or_insert_with(|| {
                        vocab_list.push(g);
                        (vocab_list.len() - 1) as u32
                    })
                })
                .collect();
            ids.sort_unstable();
            entry_features.push(ids);
        }
        Ok(Self::assemble(n, entries, vocab_list, entry_features))
    }

    fn assemble(
        n: usize,
        entries: Vec<DictEntry>,
        vocab_list: Vec<String>,
        entry_features: Vec<Vec<u32>>,
    ) -> Self {
        let vocab = vocab_list
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
        let mut buckets: BTreeMap<usize, HashMap<u32, Vec<u32>>> = BTreeMap::new();
        for (id, feats) in entry_features.iter().enumerate() {
            let bucket = buckets.entry(feats.len()).or_default();
            for &f in feats {
                bucket.entry(f).or_default().push(id as u32);
            }
        }
        NgramIndex {
            n,
            entries,
            vocab,
            vocab_list,
            entry_features,
            buckets,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature-set sizes present, with the number of entries in each.
    pub fn bucket_sizes(&self) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for f in &self.entry_features {
            *counts.entry(f.len()).or_default() += 1;
        }
        counts.into_iter().collect()
    }

    /// Feature strings of entry `id`.
    pub fn entry_features(&self, id: usize) -> Vec<&str> {
        self.entry_features[id]
            .iter()
            .map(|&f| self.vocab_list[f as usize].as_str())
            .collect()
    }

    /// Entries whose similarity with `query` is at least `threshold`, best
    /// first (ties by entry order).
    pub fn search(&self, query: &str, measure: Measure, threshold: f64) -> Vec<Hit<'_>> {
        let q = features(query, self.n);
        let x = q.len();
        let known: Vec<u32> = q
            .iter()
            .filter_map(|g| self.vocab.get(g).copied())
            .collect();
        let (lo, hi) = measure.size_bounds(x, threshold);
        let mut counts = vec![0u32; self.entries.len()];
        let mut touched: Vec<u32> = Vec::new();
        let mut hits = Vec::new();
        for (&size, postings) in self.buckets.range(lo..=hi) {
            for f in &known {
                if let Some(list) = postings.get(f) {
                    for &e in list {
                        if counts[e as usize] == 0 {
                            touched.push(e);
                        }
                        counts[e as usize] += 1;
                    }
                }
            }
            let need = measure.min_overlap(x, size, threshold);
            for e in touched.drain(..) {
                let common = std::mem::take(&mut counts[e as usize]) as usize;
                if common < need {
                    continue;
                }
                let similarity = measure.similarity(x, size, common);
                if similarity >= threshold {
                    hits.push(Hit {
                        id: e as usize,
                        entry: &self.entries[e as usize],
                        similarity,
                    });
                }
            }
        }
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
        hits
    }

    pub fn write_cache(&self, path: impl AsRef<Path>, dict_hash: &[u8; 32]) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        put_u32(&mut buf, CACHE_VERSION);
        buf.extend_from_slice(dict_hash);
        put_u32(&mut buf, self.n as u32);
        put_u32(&mut buf, self.entries.len() as u32);
        for e in &self.entries {
            put_str(&mut buf, &e.term);
            put_str(&mut buf, &e.cui);
            put_u32(&mut buf, e.semtypes.len() as u32);
            for s in &e.semtypes {
                put_str(&mut buf, s);
            }
        }
        put_u32(&mut buf, self.vocab_list.len() as u32);
        for g in &self.vocab_list {
            put_str(&mut buf, g);
        }
        for feats in &self.entry_features {
            put_u32(&mut buf, feats.len() as u32);
            for &f in feats {
                put_u32(&mut buf, f);
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a cache file. With `expected_hash`, a cache built from a
    /// different dictionary is rejected as stale.
    pub fn read_cache(path: impl AsRef<Path>, expected_hash: Option<&[u8; 32]>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
        };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::Cache(format!(
                "{} is not an index cache",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!(
                "cache version {version} is not supported (expected {CACHE_VERSION})"
            )));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if expected_hash.is_some_and(|h| *h != hash) {
            return Err(Error::Cache(
                "cache is stale: dictionary hash differs".into(),
            ));
        }
        let n = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let term = r.string()?;
            let cui = r.string()?;
            let k = r.u32()? as usize;
            let semtypes = (0..k).map(|_| r.string()).collect::<Result<_>>()?;
            entries.push(DictEntry {
                term,
                cui,
                semtypes,
            });
        }
        let vocab_len = r.u32()? as usize;
        let vocab_list: Vec<String> = (0..vocab_len).map(|_| r.string()).collect::<Result<_>>()?;
        let mut entry_features = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let k = r.u32()? as usize;
            let feats: Vec<u32> = (0..k).map(|_| r.u32()).collect::<Result<_>>()?;
            if feats.iter().any(|&f| f as usize >= vocab_len) {
                return Err(Error::Cache("feature id out of range".into()));
            }
            entry_features.push(feats);
        }
        if r.pos != bytes.len() {
            return Err(Error::Cache("trailing bytes after index".into()));
        }
        Ok(Self::assemble(n, entries, vocab_list, entry_features))
    }

    /// Loads the index for a dictionary file, reusing `cache` when it was
    /// built from the same dictionary bytes and rewriting it otherwise.
    pub fn open(dict_path: impl AsRef<Path>, n: usize, cache: Option<&Path>) -> Result<Self> {
        let dict_path = dict_path.as_ref();
        let bytes = std::fs::read(dict_path).map_err(|e| Error::io(dict_path, e))?;
        let hash = dictionary_hash(&bytes);
        if let Some(cache) = cache {
            if let Ok(index) = Self::read_cache(cache, Some(&hash)) {
                if index.n == n {
                    return Ok(index);
                }
            }
        }
        let text = String::from_utf8(bytes).map_err(|_| {
            Error::parse(
                dict_path.display().to_string(),
                None,
                "dictionary is not UTF-8",
            )
        })?;
        let index = Self::build(
            parse_dictionary(&text, &dict_path.display().to_string())?,
            n,
        )?;
        if let Some(cache) = cache {
            index.write_cache(cache, &hash)?;
        }
        Ok(index)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Cache("truncated cache file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Cache("invalid UTF-8 in cache".into()))
    }
}

fn is_boundary_token(text: &str) -> bool {
    !text.chars().any(char::is_alphanumeric) || STOPWORDS.contains(&text.to_lowercase().as_str())
}

/// A scored candidate span before overlap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCandidate {
    pub start: usize,
    pub end: usize,
    pub similarity: f64,
    /// Matching entry ids, best first.
    pub entries: Vec<usize>,
}

/// Every candidate window with at least one dictionary hit.
pub fn concept_candidates(
    doc: &Document,
    index: &NgramIndex,
    params: &NormalizerParams,
) -> Vec<ConceptCandidate> {
    let n = doc.tokens().len();
    let windows: Vec<(usize, usize)> = if doc.sentences.is_empty() {
        if n == 0 {
            vec![]
        } else {
            vec![(0, n)]
        }
    } else {
        doc.sentences
            .iter()
            .map(|s| (s.start_token, s.end_token))
            .collect()
    };
    let mut out = Vec::new();
    for (s_start, s_end) in windows {
        for start in s_start..s_end {
            if is_boundary_token(doc.token_text(start)) {
                continue;
            }
            for end in start + 1..=(start + params.window).min(s_end) {
                if is_boundary_token(doc.token_text(end - 1)) {
                    continue;
                }
                let text = doc
                    .span_text(&Span::new(start, end, ""))
                    .expect("window inside document");
                let hits = index.search(text, params.measure, params.threshold);
                if let Some(best) = hits.first() {
                    out.push(ConceptCandidate {
                        start,
                        end,
                        similarity: best.similarity,
                        entries: hits.iter().map(|h| h.id).collect(),
                    });
                }
            }
        }
    }
    out
}

/// Keeps the best of overlapping candidates: highest similarity, then longer
/// span, then earlier start. Output is sorted by start.
pub fn resolve_candidates(mut cands: Vec<ConceptCandidate>) -> Vec<ConceptCandidate> {
    cands.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then(a.start.cmp(&b.start))
    });
    let mut kept: Vec<ConceptCandidate> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| k.end <= c.start || c.end <= k.start) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.start);
    kept
}

/// Attaches concepts to the document. Identical-span entities without a CUI
/// are annotated in place; matches overlapping any other entity are dropped;
/// the rest become new entities whose category is the concept's first
/// semantic type. Links are remapped to the new entity order.
pub fn map_concepts(mut doc: Document, index: &NgramIndex, params: &NormalizerParams) -> Document {
    let kept = resolve_candidates(concept_candidates(&doc, index, params));
    if kept.is_empty() {
        return doc;
    }
    let mut tagged: Vec<(Option<usize>, Entity)> = doc
        .entities
        .drain(..)
        .enumerate()
        .map(|(i, e)| (Some(i), e))
        .collect();
    for cand in kept {
        let best = &index.entries()[cand.entries[0]];
        let existing = tagged
            .iter()
            .position(|(_, e)| e.span.start_token == cand.start && e.span.end_token == cand.end);
        let slot = match existing {
            Some(i) if tagged[i].1.cui.is_some() => continue,
            Some(i) => i,
            None if tagged
                .iter()
                .any(|(_, e)| e.span.start_token < cand.end && cand.start < e.span.end_token) =>
            {
                continue
            }
            None => {
                let category = best
                    .semtypes
                    .first()
                    .cloned()
                    .unwrap_or_else(|| "CONCEPT".into());
                tagged.push((
                    None,
                    Entity::new(Span::new(cand.start, cand.end, category.clone()), category),
                ));
                tagged.len() - 1
            }
        };
        let entity = &mut tagged[slot].1;
        entity.cui = Some(best.cui.clone());
        entity.similarity = Some(cand.similarity);
        if !params.best_match_only && cand.entries.len() > 1 {
            let cuis: Vec<&str> = cand
                .entries
                .iter()
                .map(|&i| index.entries()[i].cui.as_str())
                .collect();
            entity
                .span
                .attrs
                .insert("cuis".into(), AttrValue::Str(cuis.join("|")));
        }
    }
    tagged.sort_by_key(|(_, e)| (e.span.start_token, e.span.end_token));
    let mut remap = HashMap::new();
    for (new, (old, _)) in tagged.iter().enumerate() {
        if let Some(old) = old {
            remap.insert(*old, new);
        }
    }
    for link in &mut doc.links {
        link.1 = remap[&link.1];
    }
    doc.entities = tagged.into_iter().map(|(_, e)| e).collect();
    doc
}
