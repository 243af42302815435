use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use clintext::docmodel::Document;
use clintext::error::Error;
use clintext::normalizer::{load_dictionary, DictEntry, Measure, NgramIndex};
use clintext::pipeline::{load_config, Pipeline, PipelineConfig};
use clintext::tabular::to_rows;
use clintext::tokenizer::TokenizerRules;
use clintext::visualizer::{render_highlight, render_links, render_page};

fn py_err(e: Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// One extracted concept with its assertion flags.
#[pyclass(frozen, get_all, skip_from_py_object, name = "Entity")]
#[derive(Clone)]
struct PyEntity {
    text: String,
    start_char: usize,
    end_char: usize,
    category: String,
    cui: Option<String>,
    similarity: Option<f64>,
    is_negated: bool,
    is_historical: bool,
    is_hypothetical: bool,
    is_uncertain: bool,
    is_family: bool,
    section_category: Option<String>,
    sentence_text: String,
}

#[pymethods]
impl PyEntity {
    fn __repr__(&self) -> String {
        format!(
            "Entity({:?}, {}..{}, {}, negated={})",
            self.text, self.start_char, self.end_char, self.category, self.is_negated
        )
    }
}

/// A processed document.
#[pyclass(frozen, name = "Document")]
struct PyDocument {
    doc_id: String,
    doc: Document,
}

#[pymethods]
impl PyDocument {
    #[getter]
    fn doc_id(&self) -> &str {
        &self.doc_id
    }

    #[getter]
    fn text(&self) -> &str {
        self.doc.text()
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        (0..self.doc.tokens().len())
            .map(|i| self.doc.token_text(i).to_string())
            .collect()
    }

    #[getter]
    fn sentences(&self) -> Vec<String> {
        self.doc
            .sentences
            .iter()
            .filter_map(|s| self.doc.span_text(s).ok())
            .map(str::to_string)
            .collect()
    }

    /// `(category, title)` per section; either may be missing.
    #[getter]
    fn sections(&self) -> Vec<(Option<String>, Option<String>)> {
        self.doc
            .sections
            .iter()
            .map(|s| {
                let title = s
                    .title_span
                    .as_ref()
                    .and_then(|t| self.doc.span_text(t).ok())
                    .map(str::to_string);
                (s.category.clone(), title)
            })
            .collect()
    }

    #[getter]
    fn entities(&self) -> Vec<PyEntity> {
        to_rows(&self.doc, &self.doc_id)
            .into_iter()
            .map(|r| PyEntity {
                text: r.ent_text,
                start_char: r.start_char,
                end_char: r.end_char,
                category: r.category,
                cui: r.cui,
                similarity: r.similarity,
                is_negated: r.is_negated,
                is_historical: r.is_historical,
                is_hypothetical: r.is_hypothetical,
                is_uncertain: r.is_uncertain,
                is_family: r.is_family,
                section_category: r.section_category,
                sentence_text: r.sentence_text,
            })
            .collect()
    }

    /// Modifier text, category and the texts of the entities it links to.
    #[getter]
    fn modifiers(&self) -> Vec<(String, String, Vec<String>)> {
        self.doc
            .modifiers
            .iter()
            .enumerate()
            .map(|(m, modifier)| {
                let targets = self
                    .doc
                    .links
                    .iter()
                    .filter(|&&(lm, _)| lm == m)
                    .filter_map(|&(_, e)| self.doc.span_text(&self.doc.entities[e].span).ok())
                    .map(str::to_string)
                    .collect();
                let text = self.doc.span_text(&modifier.span).unwrap_or_default();
                (text.to_string(), modifier.category.clone(), targets)
            })
            .collect()
    }

    fn to_html(&self) -> String {
        render_highlight(&self.doc)
    }

    fn to_svg(&self) -> String {
        render_links(&self.doc)
    }

    fn to_page(&self) -> String {
        render_page(&self.doc_id, &self.doc)
    }

    fn __len__(&self) -> usize {
        self.doc.tokens().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Document({:?}, {} tokens, {} entities)",
            self.doc_id,
            self.doc.tokens().len(),
            self.doc.entities.len()
        )
    }
}

/// The full processing pipeline, from a JSON config file or the built-in rules.
#[pyclass(frozen, name = "Pipeline")]
struct PyPipeline {
    inner: Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (config=None, parallelism=None))]
    fn new(config: Option<PathBuf>, parallelism: Option<usize>) -> PyResult<Self> {
        let mut config = match config {
            Some(path) => load_config(path).map_err(py_err)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = parallelism {
            config.parallelism = p;
        }
        let inner = Pipeline::new(config).map_err(py_err)?;
        Ok(PyPipeline { inner })
    }

    #[getter]
    fn stages(&self) -> Vec<&'static str> {
        self.inner
            .config()
            .stages
            .iter()
            .map(|s| s.as_str())
            .collect()
    }

    #[pyo3(signature = (text, doc_id="doc"))]
    fn process(&self, py: Python<'_>, text: &str, doc_id: &str) -> PyResult<PyDocument> {
        let outcome = py.detach(|| self.inner.process(doc_id, text));
        let done = outcome.map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PyDocument {
            doc_id: done.doc_id,
            doc: done.doc,
        })
    }

    /// Processes `(doc_id, text)` pairs in order, yielding
    /// `(doc_id, document, error)` with exactly one of the last two set.
    fn process_many(
        &self,
        py: Python<'_>,
        docs: Vec<(String, String)>,
    ) -> Vec<(String, Option<PyDocument>, Option<String>)> {
        py.detach(|| self.inner.run_collect(docs))
            .into_iter()
            .map(|o| match o {
                Ok(p) => (
                    p.doc_id.clone(),
                    Some(PyDocument {
                        doc_id: p.doc_id,
                        doc: p.doc,
                    }),
                    None,
                ),
                Err(e) => (e.doc_id, None, Some(e.message)),
            })
            .collect()
    }
}

/// Approximate dictionary lookup over character n-grams.
#[pyclass(frozen, name = "NgramIndex")]
struct PyIndex {
    inner: NgramIndex,
}

#[pymethods]
impl PyIndex {
    /// Builds from `(term, cui)` pairs.
    #[new]
    #[pyo3(signature = (entries, n=3))]
    fn new(entries: Vec<(String, String)>, n: usize) -> PyResult<Self> {
        let entries = entries
            .iter()
            .map(|(term, cui)| DictEntry::new(term, cui, &[]))
            .collect();
        let inner = NgramIndex::build(entries, n).map_err(py_err)?;
        Ok(PyIndex { inner })
    }

    /// Loads a TSV dictionary.
    #[staticmethod]
    #[pyo3(signature = (path, n=3))]
    fn load(path: PathBuf, n: usize) -> PyResult<Self> {
        let entries = load_dictionary(path).map_err(py_err)?;
        let inner = NgramIndex::build(entries, n).map_err(py_err)?;
        Ok(PyIndex { inner })
    }

    /// `(term, cui, similarity)` for every entry at or above `threshold`,
    /// best first.
    #[pyo3(signature = (query, measure="jaccard", threshold=0.7))]
    fn search(
        &self,
        query: &str,
        measure: &str,
        threshold: f64,
    ) -> PyResult<Vec<(String, String, f64)>> {
        let measure: Measure = measure.parse().map_err(py_err)?;
        Ok(self
            .inner
            .search(query, measure, threshold)
            .into_iter()
            .map(|h| (h.entry.term.clone(), h.entry.cui.clone(), h.similarity))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `(text, start_char, end_char)` per token.
#[pyfunction]
fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    let doc = clintext::tokenizer::tokenize(text, &TokenizerRules::default());
    doc.tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (doc.token_text(i).to_string(), t.start_char, t.end_char))
        .collect()
}

/// `(category, literals)` per question line of a form template.
#[pyfunction]
fn rules_from_template(template: &str, prefix: &str) -> Vec<(String, Vec<String>)> {
    clintext::sectionizer::rules_from_template(template, prefix)
        .into_iter()
        .map(|r| (r.category, r.literals))
        .collect()
}

#[pymodule]
#[pyo3(name = "clintext")]
fn clintext_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyDocument>()?;
    m.add_class::<PyEntity>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(rules_from_template, m)?)?;
    Ok(())
}
