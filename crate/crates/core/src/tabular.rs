//! One-row-per-entity export to CSV and JSONL, and corpus readers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::docmodel::{Attrs, Document};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 14] = [
    "doc_id",
    "ent_text",
    "start_char",
    "end_char",
    "category",
    "cui",
    "similarity",
    "is_negated",
    "is_historical",
    "is_hypothetical",
    "is_uncertain",
    "is_family",
    "section_category",
    "sentence_text",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRow {
    pub doc_id: String,
    pub ent_text: String,
    pub start_char: usize,
    pub end_char: usize,
    pub category: String,
    pub cui: Option<String>,
    pub similarity: Option<f64>,
    pub is_negated: bool,
    pub is_historical: bool,
    pub is_hypothetical: bool,
    pub is_uncertain: bool,
    pub is_family: bool,
    pub section_category: Option<String>,
    pub sentence_text: String,
    /// Custom entity attributes; JSONL only.
    #[serde(skip)]
    pub extras: Attrs,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    #[serde(flatten)]
    row: ExtractionRow,
    #[serde(default)]
    extras: Attrs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

/// One row per entity in document order.
pub fn to_rows(doc: &Document, doc_id: &str) -> Vec<ExtractionRow> {
    doc.entities
        .iter()
        .map(|e| {
            let (start_char, end_char) = doc.span_chars(&e.span).expect("entity spans are valid");
            let sentence_text = doc
                .sentence_of(e.span.start_token)
                .map(|i| {
                    doc.span_text(&doc.sentences[i])
                        .expect("sentence spans are valid")
                })
                .unwrap_or_default()
                .to_string();
            let section_category = e.section_category.clone().or_else(|| {
                doc.section_of(e.span.start_token)
                    .and_then(|i| doc.sections[i].category.clone())
            });
            ExtractionRow {
                doc_id: doc_id.to_string(),
                ent_text: doc
                    .char_slice(start_char, end_char)
                    .expect("in range")
                    .to_string(),
                start_char,
                end_char,
                category: e.category.clone(),
                cui: e.cui.clone(),
                similarity: e.similarity,
                is_negated: e.is_negated,
                is_historical: e.is_historical,
                is_hypothetical: e.is_hypothetical,
                is_uncertain: e.is_uncertain,
                is_family: e.is_family,
                section_category,
                sentence_text,
                extras: e.extras().clone(),
            }
        })
        .collect()
}

/// Streams rows to a file. Output goes to a sibling temporary file that
/// replaces `path` on [`RowWriter::finish`], and each row is encoded in full
/// before any byte of it is written.
pub struct RowWriter {
    format: Format,
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    count: usize,
}

impl RowWriter {
    pub fn create(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        let tmp = path.with_file_name(name);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut writer = RowWriter {
            format,
            path,
            tmp,
            out: BufWriter::new(file),
            count: 0,
        };
        if format == Format::Csv {
            let mut header = CSV_HEADER.join(",");
            header.push('\n');
            writer.put(header.as_bytes())?;
        }
        Ok(writer)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.out
            .write_all(bytes)
            .map_err(|e| Error::io(&self.tmp, e))
    }

    pub fn write(&mut self, row: &ExtractionRow) -> Result<()> {
        let bytes = encode_row(row, self.format)?;
        self.put(&bytes)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Flushes and moves the output into place; returns the row count.
    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

fn encode_row(row: &ExtractionRow, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.serialize(row)
                .map_err(|e| Error::Internal(e.to_string()))?;
            w.into_inner().map_err(|e| Error::Internal(e.to_string()))
        }
        Format::Jsonl => {
            let json = JsonRow {
                row: row.clone(),
                extras: row.extras.clone(),
            };
            let mut bytes =
                serde_json::to_vec(&json).map_err(|e| Error::Internal(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
    }
}

pub fn write_rows<'a>(
    rows: impl IntoIterator<Item = &'a ExtractionRow>,
    format: Format,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let mut writer = RowWriter::create(path, format)?;
    for row in rows {
        writer.write(row)?;
    }
    writer.finish()
}

pub fn read_csv_rows(path: impl AsRef<Path>) -> Result<Vec<ExtractionRow>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::parse(&origin, None, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(&origin, Some(1), e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::parse(&origin, Some(1), "unexpected header"));
    }
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| {
                Error::parse(
                    &origin,
                    e.position().map(|p| p.line() as usize),
                    e.to_string(),
                )
            })
        })
        .collect()
}

pub fn read_jsonl_rows(path: impl AsRef<Path>) -> Result<Vec<ExtractionRow>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let json: JsonRow = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&origin, Some(i + 1), e.to_string()))?;
        rows.push(ExtractionRow {
            extras: json.extras,
            ..json.row
        });
    }
    Ok(rows)
}

/// Lazily read `(doc_id, text)` pairs.
pub type Corpus = Box<dyn Iterator<Item = Result<(String, String)>> + Send>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    doc_id: String,
    text: String,
}

/// Documents from a directory of `.txt` files (id = file stem, sorted by
/// file name) or from a JSONL file of `{doc_id, text}` objects. Items are
/// read lazily.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref().to_path_buf();
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
            let p = entry.map_err(|e| Error::io(&path, e))?.path();
            if p.is_file() && p.extension().is_some_and(|x| x == "txt") {
                files.push(p);
            }
        }
        files.sort();
        Ok(Box::new(files.into_iter().map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let id = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok((id, text))
        })))
    } else {
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let origin = path.display().to_string();
        Ok(Box::new(
            BufReader::new(file)
                .lines()
                .enumerate()
                .filter_map(move |(i, line)| {
                    let line = match line {
                        Ok(l) => l,
                        Err(e) => return Some(Err(Error::io(&path, e))),
                    };
                    if line.trim().is_empty() {
                        return None;
                    }
                    Some(
                        serde_json::from_str::<CorpusLine>(&line)
                            .map(|c| (c.doc_id, c.text))
                            .map_err(|e| Error::parse(&origin, Some(i + 1), e.to_string())),
                    )
                }),
        ))
    }
}
