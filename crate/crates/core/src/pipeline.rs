//! Configurable stage composition and batched, order-preserving execution.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{apply_context, default_context_rules, load_context_rules, ContextEngine};
use crate::docmodel::Document;
use crate::error::{Error, Result};
use crate::normalizer::{default_dictionary, map_concepts, Measure, NgramIndex, NormalizerParams};
use crate::sectionizer::{
    apply_section_attributes, default_section_rules, detect_sections, load_section_rules,
    validate_section_rules, SectionRule,
};
use crate::sentencizer::{load_boundary_rules, segment, BoundaryRuleSet};
use crate::tabular::Format;
use crate::target::{default_target_rules, load_target_rules, match_targets, TargetMatcher};
use crate::tokenizer::{tokenize, TokenizerRules};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tokenizer,
    Sentencizer,
    Sectionizer,
    TargetMatcher,
    Context,
    Normalizer,
    SectionAttributes,
}

impl Stage {
    pub const DEFAULT_ORDER: [Stage; 7] = [
        Stage::Tokenizer,
        Stage::Sentencizer,
        Stage::Sectionizer,
        Stage::TargetMatcher,
        Stage::Normalizer,
        Stage::Context,
        Stage::SectionAttributes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tokenizer => "tokenizer",
            Stage::Sentencizer => "sentencizer",
            Stage::Sectionizer => "sectionizer",
            Stage::TargetMatcher => "target_matcher",
            Stage::Context => "context",
            Stage::Normalizer => "normalizer",
            Stage::SectionAttributes => "section_attributes",
        }
    }

    /// Stages that must run earlier when this one is present.
    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Sectionizer | Stage::Context | Stage::Normalizer => &[Stage::Sentencizer],
            Stage::SectionAttributes => &[Stage::Sectionizer, Stage::Context],
            _ => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerConfig {
    pub n: usize,
    pub measure: Measure,
    pub threshold: f64,
    pub window: usize,
    pub best_match_only: bool,
    /// Index cache file; rebuilt when missing or stale.
    pub cache: Option<PathBuf>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        let p = NormalizerParams::default();
        NormalizerConfig {
            n: 3,
            measure: p.measure,
            threshold: p.threshold,
            window: p.window,
            best_match_only: p.best_match_only,
            cache: None,
        }
    }
}

impl NormalizerConfig {
    pub fn params(&self) -> NormalizerParams {
        NormalizerParams {
            threshold: self.threshold,
            measure: self.measure,
            window: self.window,
            best_match_only: self.best_match_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    /// Rule file per stage; the normalizer entry is its dictionary. Stages
    /// without an entry use the bundled defaults.
    pub rules: BTreeMap<Stage, PathBuf>,
    pub normalizer: NormalizerConfig,
    pub batch_size: usize,
    pub parallelism: usize,
    /// Documents longer than this many characters are rejected.
    pub max_doc_chars: Option<usize>,
    /// Corpus location for command-line runs.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    /// Directory for per-document HTML views.
    pub viz_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Stage::DEFAULT_ORDER.to_vec(),
            rules: BTreeMap::new(),
            normalizer: NormalizerConfig::default(),
            batch_size: 64,
            parallelism: 1,
            max_doc_chars: None,
            input: None,
            output: None,
            format: None,
            viz_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(json: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::parse(origin, Some(e.line()), e.to_string()))
    }

    /// Checks stage ordering, numeric settings and rule file presence.
    pub fn validate(&self) -> Result<()> {
        match self.stages.first() {
            Some(Stage::Tokenizer) => {}
            Some(other) => {
                return Err(Error::Config(format!(
                    "stage `{other}` cannot precede `tokenizer`, which must be first"
                )))
            }
            None => {
                return Err(Error::Config(
                    "stage list is empty; `tokenizer` is required".into(),
                ))
            }
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(stage) {
                return Err(Error::Config(format!("stage `{stage}` is listed twice")));
            }
            for pre in stage.prerequisites() {
                match self.stages.iter().position(|s| s == pre) {
                    Some(j) if j < i => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "stage `{stage}` must come after `{pre}`"
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "stage `{stage}` requires `{pre}` before it"
                        )))
                    }
                }
            }
        }
        for (stage, path) in &self.rules {
            if stage == &Stage::SectionAttributes {
                return Err(Error::Config(
                    "stage `section_attributes` takes no rule file".into(),
                ));
            }
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "rule file for stage `{stage}` not found: {}",
                    path.display()
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.normalizer.n < 2 {
            return Err(Error::Config("normalizer n must be at least 2".into()));
        }
        self.normalizer.params().validate()
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for path in self.rules.values_mut() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        let optional = [
            self.normalizer.cache.as_mut(),
            self.input.as_mut(),
            self.output.as_mut(),
            self.viz_dir.as_mut(),
        ];
        for path in optional.into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// Reads a JSON config, resolves its paths against the file's directory and
/// validates it.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = PipelineConfig::from_json(&json, &path.display().to_string())?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocError {
    pub doc_id: String,
    pub message: String,
}

impl fmt::Display for DocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.doc_id, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Processed {
    pub doc_id: String,
    pub doc: Document,
}

pub type Outcome = std::result::Result<Processed, DocError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub processed: usize,
    pub failed: usize,
}

/// A compiled pipeline: all rule packs and the index are built once and
/// shared read-only across workers.
pub struct Pipeline {
    config: PipelineConfig,
    tokenizer: TokenizerRules,
    boundaries: BoundaryRuleSet,
    sections: Vec<SectionRule>,
    targets: Option<TargetMatcher>,
    context: Option<ContextEngine>,
    index: Option<NgramIndex>,
    pool: rayon::ThreadPool,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let rule = |s: Stage| config.rules.get(&s).filter(|_| config.has(s));
        let tokenizer = match rule(Stage::Tokenizer) {
            Some(p) => TokenizerRules::load(p)?,
            None => TokenizerRules::default(),
        };
        let boundaries = match rule(Stage::Sentencizer) {
            Some(p) => load_boundary_rules(p)?,
            None => BoundaryRuleSet::default(),
        };
        let sections = match rule(Stage::Sectionizer) {
            Some(p) => load_section_rules(p)?,
            None if config.has(Stage::Sectionizer) => default_section_rules(),
            None => Vec::new(),
        };
        validate_section_rules(&sections)?;
        let targets = if config.has(Stage::TargetMatcher) {
            let rules = match rule(Stage::TargetMatcher) {
                Some(p) => load_target_rules(p)?,
                None => default_target_rules(),
            };
            Some(TargetMatcher::compile(rules, &tokenizer)?)
        } else {
            None
        };
        let context = if config.has(Stage::Context) {
            let rules = match rule(Stage::Context) {
                Some(p) => load_context_rules(p)?,
                None => default_context_rules(),
            };
            Some(ContextEngine::compile(rules, &tokenizer)?)
        } else {
            None
        };
        let index = if config.has(Stage::Normalizer) {
            let n = config.normalizer.n;
            Some(match rule(Stage::Normalizer) {
                Some(p) => NgramIndex::open(p, n, config.normalizer.cache.as_deref())?,
                None => NgramIndex::build(default_dictionary(), n)?,
            })
        } else {
            None
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Pipeline {
            config,
            tokenizer,
            boundaries,
            sections,
            targets,
            context,
            index,
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn tokenizer_rules(&self) -> &TokenizerRules {
        &self.tokenizer
    }

    fn run_stages(&self, text: &str) -> Result<Document> {
        if let Some(limit) = self.config.max_doc_chars {
            let len = text.chars().count();
            if len > limit {
                return Err(Error::Document(format!(
                    "{len} characters exceeds the limit of {limit}"
                )));
            }
        }
        let mut doc = tokenize(text, &self.tokenizer);
        for stage in &self.config.stages[1..] {
            doc = match stage {
                Stage::Tokenizer => unreachable!("validated: tokenizer runs first"),
                Stage::Sentencizer => segment(doc, &self.boundaries),
                Stage::Sectionizer => detect_sections(doc, &self.sections),
                Stage::TargetMatcher => {
                    match_targets(doc, self.targets.as_ref().expect("compiled"))
                }
                Stage::Context => apply_context(doc, self.context.as_ref().expect("compiled")),
                Stage::Normalizer => map_concepts(
                    doc,
                    self.index.as_ref().expect("built"),
                    &self.config.normalizer.params(),
                ),
                Stage::SectionAttributes => apply_section_attributes(doc)?,
            };
        }
        Ok(doc)
    }

    /// Runs every configured stage on one document. Stage errors and panics
    /// are reported as a [`DocError`].
    pub fn process(&self, doc_id: &str, text: &str) -> Outcome {
        let fail = |message: String| DocError {
            doc_id: doc_id.to_string(),
            message,
        };
        match catch_unwind(AssertUnwindSafe(|| self.run_stages(text))) {
            Ok(Ok(doc)) => Ok(Processed {
                doc_id: doc_id.to_string(),
                doc,
            }),
            Ok(Err(e)) => Err(fail(e.to_string())),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "stage panicked".into());
                Err(fail(format!("stage panicked: {msg}")))
            }
        }
    }

    /// Streams `docs` through the pipeline in batches, handing each outcome
    /// to `sink` in input order. An error returned by `sink` stops the run.
    pub fn run<I, F, E>(&self, docs: I, mut sink: F) -> std::result::Result<RunStats, E>
    where
        I: IntoIterator<Item = (String, String)>,
        F: FnMut(Outcome) -> std::result::Result<(), E>,
    {
        let mut stats = RunStats::default();
        let mut docs = docs.into_iter();
        loop {
            let batch: Vec<(String, String)> = docs.by_ref().take(self.config.batch_size).collect();
            if batch.is_empty() {
                return Ok(stats);
            }
            let outcomes: Vec<Outcome> = self.pool.install(|| {
                batch
                    .par_iter()
                    .map(|(id, text)| self.process(id, text))
                    .collect()
            });
            for outcome in outcomes {
                match outcome {
                    Ok(_) => stats.processed += 1,
                    Err(_) => stats.failed += 1,
                }
                sink(outcome)?;
            }
        }
    }

    pub fn run_collect(&self, docs: impl IntoIterator<Item = (String, String)>) -> Vec<Outcome> {
        let mut out = Vec::new();
        let _ = self.run(docs, |o| {
            out.push(o);
            Ok::<(), std::convert::Infallible>(())
        });
        out
    }
}

/// Builds a pipeline from `config` and runs it over `docs`.
pub fn run_pipeline(
    config: PipelineConfig,
    docs: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<Outcome>> {
    Ok(Pipeline::new(config)?.run_collect(docs))
}
