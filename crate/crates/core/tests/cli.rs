//! The `clinote` binary as a subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const SOAP_NOTE: &str = include_str!("../prompts/exemplar_soap_note.json");
const DIARIZED: &str = include_str!("fixtures/excerpt_diarized.txt");
const RAW: &str = include_str!("fixtures/excerpt_raw.txt");

fn clinote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinote")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mock_config(path: &Path, replies: &[&str]) {
    let cfg = json!({
        "backend": {"kind": "mock", "script": {"ordered": replies}},
        "clock": {"kind": "stepped", "start": "2024-02-01T08:00:00Z", "step_ms": 500}
    });
    fs::write(path, cfg.to_string()).unwrap();
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(clinote(&[]).status.code(), Some(64));
    assert_eq!(clinote(&["generate"]).status.code(), Some(64));
    assert_eq!(clinote(&["schema", "--kind", "dap"]).status.code(), Some(64));
    let help = clinote(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("redact-check"));
}

#[test]
fn schema_command() {
    let out = clinote(&["schema", "--kind", "birp"]);
    assert!(out.status.success());
    let schema: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(schema["$schema"], "http://json-schema.org/draft-07/schema#");
    assert!(schema["properties"]["behavior"].is_object());
}

#[test]
fn train_and_diarize_with_gold_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.txt");
    let raw = dir.path().join("raw.txt");
    let model = dir.path().join("model.json");
    let out = dir.path().join("out.txt");
    fs::write(&gold, DIARIZED).unwrap();
    fs::write(&raw, RAW).unwrap();

    let o = clinote(&["train", s(&gold), "--output", s(&model), "--epochs", "400", "--learning-rate", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("trained on 17 segments"));

    let o = clinote(&["diarize", s(&raw), "--model", s(&model), "--output", s(&out), "--gold", s(&gold)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("accuracy "));
    let acc: f64 = lines[0]["accuracy ".len()..].parse().unwrap();
    // The model has seen these very segments.
    assert_eq!(acc, 1.0);
    assert_eq!(fs::read_to_string(&out).unwrap(), DIARIZED);
}

#[test]
fn diarize_with_bad_model_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    let model = dir.path().join("model.json");
    fs::write(&raw, RAW).unwrap();
    fs::write(&model, "{}").unwrap();
    let o = clinote(&["diarize", s(&raw), "--model", s(&model), "--output", s(&dir.path().join("o.txt"))]);
    assert_eq!(o.status.code(), Some(8));
}

#[test]
fn diarize_through_mock_llm() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "How are you? Fine thanks.").unwrap();
    let cfg = dir.path().join("cfg.json");
    mock_config(&cfg, &["[0] How are you? [1] Fine thanks."]);
    let out = dir.path().join("d.txt");
    let o = clinote(&["diarize", s(&raw), "--llm", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "[0] How are you? [1] Fine thanks.\n");
    assert_eq!(fs::read_to_string(dir.path().join("d.txt.ledger.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn generate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.txt");
    fs::write(&input, DIARIZED).unwrap();
    let out = dir.path().join("n.json");
    let cfg = dir.path().join("cfg.json");
    let run = || clinote(&["generate", s(&input), "--kind", "soap", "--config", s(&cfg), "--output", s(&out)]);

    mock_config(&cfg, &["{}", r#"{"plan": 1}"#]);
    let o = run();
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("required-missing"));
    assert!(!out.exists());

    mock_config(&cfg, &[]);
    assert_eq!(run().status.code(), Some(9));

    fs::write(&cfg, r#"{"backend": {"kind": "carrier-pigeon"}}"#).unwrap();
    assert_eq!(run().status.code(), Some(8));

    mock_config(&cfg, &[SOAP_NOTE]);
    let o = run();
    assert!(o.status.success(), "{}", stderr(&o));
    let written: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, serde_json::from_str::<Value>(SOAP_NOTE).unwrap());
}

#[test]
fn refine_history_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let input = dir.path().join("t.txt");
    fs::write(&input, DIARIZED).unwrap();
    let cfg = dir.path().join("cfg.json");
    let refine = |mode: &str| {
        clinote(&["refine", s(&input), "--patient", "p7", "--mode", mode, "--store", s(&store), "--config", s(&cfg)])
    };

    mock_config(&cfg, &[SOAP_NOTE]);
    assert_eq!(refine("conditional").status.code(), Some(5), "unknown patient");
    let o = refine("initial");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(refine("initial").status.code(), Some(5), "patient exists");
    let o = refine("conditional");
    assert!(o.status.success(), "{}", stderr(&o));

    let o = clinote(&["history", "--patient", "p7", "--store", s(&store)]);
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1 ") && rows[1].contains("initial"));
    assert!(rows[2].starts_with("2 ") && rows[2].contains("conditional"));
    // Later runs resume the stepped clock after the stored timestamps.
    assert!(rows[1].split_whitespace().nth(1) < rows[2].split_whitespace().nth(1));

    let chain = store.join("p7.jsonl");
    let text = fs::read_to_string(&chain).unwrap();
    fs::write(&chain, text.replacen("\"version_no\":1", "\"version_no\":3", 1)).unwrap();
    let o = clinote(&["history", "--patient", "p7", "--store", s(&store), "--verify"]);
    assert_eq!(o.status.code(), Some(7));
    assert!(stderr(&o).contains("broken at version"));
}

#[test]
fn eval_writes_reports_and_flags_unmatched() {
    let dir = tempfile::tempdir().unwrap();
    let (cands, refs) = (dir.path().join("c"), dir.path().join("r"));
    fs::create_dir_all(cands.join("m1")).unwrap();
    fs::create_dir_all(&refs).unwrap();
    fs::write(cands.join("m1").join("a.json"), SOAP_NOTE).unwrap();
    fs::write(cands.join("b.json"), SOAP_NOTE).unwrap();
    fs::write(refs.join("a.json"), SOAP_NOTE).unwrap();
    fs::write(refs.join("b.json"), SOAP_NOTE).unwrap();
    let report = dir.path().join("out").join("report.csv");
    let o = clinote(&["eval", "--candidates", s(&cands), "--references", s(&refs), "--output", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&report).unwrap(),
        "sample_id,kind,model_id,rouge1_f1\na,SOAP,m1,1.000000\nb,SOAP,candidate,1.000000\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("out").join("report_aggregates.csv")).unwrap(),
        "model_id,mean,min,max\ncandidate,1.000000,1.000000,1.000000\nm1,1.000000,1.000000,1.000000\n"
    );

    fs::write(refs.join("c.json"), SOAP_NOTE).unwrap();
    fs::write(cands.join("d.json"), SOAP_NOTE).unwrap();
    let o = clinote(&["eval", "--candidates", s(&cands), "--references", s(&refs), "--output", s(&report)]);
    assert_eq!(o.status.code(), Some(6));
    let err = stderr(&o);
    assert!(err.contains("reference c has no candidate") && err.contains("candidate candidate/d has no reference"), "{err}");
}

#[test]
fn redact_check_reports_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let note = dir.path().join("n.json");
    let mut doc: Value = serde_json::from_str(SOAP_NOTE).unwrap();
    doc["plan"]["homework"] = json!("Email me at sam@example.net");
    fs::write(&note, doc.to_string()).unwrap();
    let o = clinote(&["redact-check", s(&note)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("/plan/homework: email at characters 12..27"), "{}", stdout(&o));

    fs::write(&note, SOAP_NOTE).unwrap();
    assert_eq!(clinote(&["redact-check", s(&note)]).status.code(), Some(0));
    assert_eq!(clinote(&["redact-check", s(&dir.path().join("missing.json"))]).status.code(), Some(2));
}
