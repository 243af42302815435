use std::cell::Cell;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use clintext::error::{Error, Result};
use clintext::normalizer::{dictionary_hash, parse_dictionary, NgramIndex};
use clintext::pipeline::{load_config, Pipeline};
use clintext::sectionizer::rules_from_template;
use clintext::tabular::{read_corpus, to_rows, Format, RowWriter};
use clintext::visualizer::render_page;

#[derive(Parser)]
#[command(
    name = "clintext",
    version,
    about = "Rule-based clinical text processing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Jsonl,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a corpus and write one row per entity.
    Process {
        #[arg(long)]
        config: PathBuf,
        /// Directory of .txt files or a JSONL file of {doc_id, text}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
        /// Write one HTML view per document here.
        #[arg(long)]
        viz_dir: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Compile every rule file named by a config and report problems.
    ValidateRules {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate section rules from a form template.
    RulesFromTemplate {
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        prefix: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build and persist the n-gram index of a dictionary.
    BuildIndex {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn log(doc_id: Option<&str>, event: &str, detail: impl Display) {
    let ts = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let detail = detail.to_string();
    let detail = if detail.is_empty() {
        String::new()
    } else {
        format!(" message={}", serde_json::Value::String(detail))
    };
    eprintln!(
        "{ts} doc_id={} event={event}{detail}",
        doc_id.unwrap_or("-")
    );
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        2
    } else {
        1
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn process(
    config: &Path,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    format: Option<OutputFormat>,
    viz_dir: Option<PathBuf>,
    parallelism: Option<usize>,
) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(p) = parallelism {
        config.parallelism = p;
    }
    config.input = input.or(config.input);
    config.output = output.or(config.output);
    config.format = format.map(Format::from).or(config.format);
    config.viz_dir = viz_dir.or(config.viz_dir);
    config.validate()?;
    let input = config
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input given (--input or config `input`)".into()))?;
    let output = config
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output given (--output or config `output`)".into()))?;
    let format = config.format.unwrap_or(Format::Csv);
    let viz_dir = config.viz_dir.clone();

    let pipeline = Pipeline::new(config)?;
    let corpus = read_corpus(&input)?;
    if let Some(dir) = &viz_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut writer = RowWriter::create(&output, format)?;
    let unreadable = Cell::new(0usize);
    let docs = corpus.filter_map(|item| match item {
        Ok(doc) => Some(doc),
        Err(e) => {
            log(None, "skipped", &e);
            unreadable.set(unreadable.get() + 1);
            None
        }
    });
    let stats = pipeline.run(docs, |outcome| {
        match outcome {
            Ok(p) => {
                for row in to_rows(&p.doc, &p.doc_id) {
                    writer.write(&row)?;
                }
                if let Some(dir) = &viz_dir {
                    let page = render_page(&p.doc_id, &p.doc);
                    write(
                        &dir.join(format!("{}.html", file_stem(&p.doc_id))),
                        page.as_bytes(),
                    )?;
                }
            }
            Err(e) => log(Some(&e.doc_id), "skipped", &e.message),
        }
        Ok::<(), Error>(())
    })?;
    let rows = writer.finish()?;
    let skipped = stats.failed + unreadable.get();
    log(
        None,
        "done",
        format!(
            "processed={} skipped={skipped} rows={rows}",
            stats.processed
        ),
    );
    Ok(())
}

fn file_stem(doc_id: &str) -> String {
    doc_id
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn validate_rules(config: &Path) -> Result<()> {
    let config = load_config(config)?;
    let stages: Vec<&str> = config.stages.iter().map(|s| s.as_str()).collect();
    Pipeline::new(config.clone())?;
    println!("ok: {} stages ({})", stages.len(), stages.join(", "));
    Ok(())
}

fn template_rules(template: &Path, prefix: &str, output: &Path) -> Result<()> {
    let bytes = read(template)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Config(format!("{} is not UTF-8", template.display())))?;
    let rules = rules_from_template(&text, prefix);
    let mut json =
        serde_json::to_string_pretty(&rules).map_err(|e| Error::Internal(e.to_string()))?;
    json.push('\n');
    write(output, json.as_bytes())?;
    println!(
        "{} section rules written to {}",
        rules.len(),
        output.display()
    );
    Ok(())
}

fn build_index(dict: &Path, n: usize, output: &Path) -> Result<()> {
    let bytes = read(dict)?;
    let hash = dictionary_hash(&bytes);
    let origin = dict.display().to_string();
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Dictionary(format!("{origin} is not UTF-8")))?;
    let index = NgramIndex::build(parse_dictionary(&text, &origin)?, n)?;
    index.write_cache(output, &hash)?;
    println!("{} entries indexed to {}", index.len(), output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Process {
            config,
            input,
            output,
            format,
            viz_dir,
            parallelism,
        } => process(&config, input, output, format, viz_dir, parallelism),
        Command::ValidateRules { config } => validate_rules(&config),
        Command::RulesFromTemplate {
            template,
            prefix,
            output,
        } => template_rules(&template, &prefix, &output),
        Command::BuildIndex { dict, n, output } => build_index(&dict, n, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log(None, "error", &e);
            ExitCode::from(exit_code(&e))
        }
    }
}
