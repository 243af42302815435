use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str = "doc_id,ent_text,start_char,end_char,category,cui,similarity,is_negated,is_historical,is_hypothetical,is_uncertain,is_family,section_category,sentence_text";

fn clintext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clintext"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.json")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn corpus(dir: &TempDir) -> PathBuf {
    let input = dir.path().join("notes");
    fs::create_dir(&input).unwrap();
    fs::write(
        input.join("a.txt"),
        "History of Present Illness:\nPatient denies chest pain. Reports cough.\n",
    )
    .unwrap();
    fs::write(
        input.join("b.txt"),
        "Family History:\nMother with breast cancer.\n",
    )
    .unwrap();
    fs::write(input.join("c.txt"), "No fever. Possible pneumonia.\n").unwrap();
    input
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn process_writes_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(&dir);
    let output = dir.path().join("out.csv");
    let out = clintext(&[
        "process",
        "--config",
        p(&default_config()),
        "--input",
        p(&input),
        "--output",
        p(&output),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(&output).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("a,chest pain,")));
    assert!(rows.iter().any(|r| r.starts_with("b,breast cancer,")));
    assert!(rows.iter().any(|r| r.starts_with("c,fever,")));
    let log = stderr(&out);
    assert!(log.contains("event=done"), "{log}");
    assert!(log.contains("processed=3 skipped=0"), "{log}");
    assert!(!dir.path().join("out.csv.partial").exists());
}

#[test]
fn process_is_deterministic_across_runs_and_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(&dir);
    let run = |name: &str, parallelism: &str| {
        let output = dir.path().join(name);
        let out = clintext(&[
            "process",
            "--config",
            p(&default_config()),
            "--input",
            p(&input),
            "--output",
            p(&output),
            "--parallelism",
            parallelism,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(output).unwrap()
    };
    let first = run("one.csv", "1");
    assert_eq!(first, run("two.csv", "1"));
    assert_eq!(first, run("three.csv", "4"));
}

#[test]
fn process_jsonl_and_viz_dir() {
    let dir = tempfile::tempdir().unwrap();
    let input = corpus(&dir);
    let output = dir.path().join("out.jsonl");
    let viz = dir.path().join("viz");
    let out = clintext(&[
        "process",
        "--config",
        p(&default_config()),
        "--input",
        p(&input),
        "--output",
        p(&output),
        "--format",
        "jsonl",
        "--viz-dir",
        p(&viz),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&output).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["doc_id"].is_string());
        assert!(v["is_negated"].is_boolean());
        assert!(v["extras"].is_object());
    }
    for id in ["a", "b", "c"] {
        let page = fs::read_to_string(viz.join(format!("{id}.html"))).unwrap();
        assert!(page.contains("<pre class=\"clintext\">"));
    }
}

#[test]
fn process_reads_jsonl_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("docs.jsonl");
    fs::write(
        &input,
        "{\"doc_id\":\"x1\",\"text\":\"No cough.\"}\n{\"doc_id\":\"x2\",\"text\":\"Fever.\"}\n",
    )
    .unwrap();
    let output = dir.path().join("out.csv");
    let out = clintext(&[
        "process",
        "--config",
        p(&default_config()),
        "--input",
        p(&input),
        "--output",
        p(&output),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(&output).unwrap();
    assert!(csv.contains("\nx1,cough,3,8,PROBLEM,"));
    assert!(csv.contains("\nx2,Fever,"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = clintext(&[
        "process",
        "--config",
        p(&default_config()),
        "--input",
        p(&dir.path().join("nowhere")),
        "--output",
        p(&dir.path().join("out.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("event=error"));
}

#[test]
fn unknown_flag_exits_one() {
    let out = clintext(&["process", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = clintext(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

fn config_with_targets(dir: &TempDir, targets: &str) -> PathBuf {
    let rules = dir.path().join("targets.json");
    fs::write(&rules, targets).unwrap();
    let config = dir.path().join("config.json");
    let body = serde_json::json!({
        "stages": ["tokenizer", "sentencizer", "target_matcher", "context"],
        "rules": { "target_matcher": rules },
    });
    fs::write(&config, body.to_string()).unwrap();
    config
}

#[test]
fn validate_rules_accepts_default_config() {
    let out = clintext(&["validate-rules", "--config", p(&default_config())]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 7 stages"));
}

#[test]
fn validate_rules_names_the_broken_rule() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_with_targets(
        &dir,
        r#"[{"id": "fine", "category": "PROBLEM", "literal": "cough"},
            {"id": "broken_regex", "category": "PROBLEM", "regex": "(unclosed"}]"#,
    );
    let out = clintext(&["validate-rules", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("broken_regex"), "{}", stderr(&out));
}

#[test]
fn validate_rules_reports_missing_rule_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"stages": ["tokenizer", "sentencizer", "context"], "rules": {"context": "absent.json"}}"#,
    )
    .unwrap();
    let out = clintext(&["validate-rules", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn rules_from_template_writes_one_rule_per_question() {
    let dir = tempfile::tempdir().unwrap();
    let template = dir.path().join("form.txt");
    fs::write(&template, "Intake form\nDo you smoke?:\nAny allergies?:\n").unwrap();
    let output = dir.path().join("rules.json");
    let out = clintext(&[
        "rules-from-template",
        "--template",
        p(&template),
        "--prefix",
        "intake_",
        "--output",
        p(&output),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rules: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(rules.len(), 2);
    assert!(rules
        .iter()
        .all(|r| r["category"].as_str().unwrap().starts_with("intake_")));
}

#[test]
fn build_index_writes_cache() {
    let dir = tempfile::tempdir().unwrap();
    let dict = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/toy_dictionary.tsv");
    let output = dir.path().join("toy.idx");
    let out = clintext(&[
        "build-index",
        "--dict",
        p(&dict),
        "--n",
        "3",
        "--output",
        p(&output),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = fs::read(&output).unwrap();
    assert!(bytes.starts_with(b"CLTXNGI\0"));

    let out = clintext(&[
        "build-index",
        "--dict",
        p(&dir.path().join("missing.tsv")),
        "--output",
        p(&output),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
