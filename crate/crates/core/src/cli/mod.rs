//! The `clinote` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | `redact-check` found PII |
//! | 2 | I/O error (unreadable input, unwritable output) |
//! | 3 | classification failure |
//! | 4 | note still invalid after one repair |
//! | 5 | refinement or commit failure |
//! | 6 | unmatched sample ids in `eval` |
//! | 7 | broken hash chain |
//! | 8 | invalid configuration or model file |
//! | 9 | backend failure during `generate` |
//! | 64 | usage error |

mod config;
mod eval;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::classify::{classify_transcript, classify_with_llm, ClassifierModel, TrainingConfig};
use crate::evaluate::{confusion, ClassificationMetrics};
use crate::gateway::{complete_note, CallLedger, GenerationError};
use crate::notes::{note_file_bytes, scan_pii, schema_json, NoteKind};
use crate::prompts::{PromptTemplate, Strategy};
use crate::refine::{
    conditional_update, initial_version, two_step, ChainStatus, EncounterData, NoteStore, RefineError,
};
use crate::transcript::{
    ingest_records, parse_diarized, render_diarized, segment_text, DiarizedTranscript, RawTranscript, SpeakerLabel,
};

pub use config::{ClockConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PII: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CLASSIFY: i32 = 3;
pub const EXIT_INVALID_NOTE: i32 = 4;
pub const EXIT_REFINE: i32 = 5;
pub const EXIT_UNMATCHED: i32 = 6;
pub const EXIT_BROKEN_CHAIN: i32 = 7;
pub const EXIT_CONFIG: i32 = 8;
pub const EXIT_BACKEND: i32 = 9;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "clinote", version, about = "Draft SOAP/BIRP notes from clinical conversation transcripts")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Soap,
    Birp,
}

impl From<KindArg> for NoteKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Soap => NoteKind::Soap,
            KindArg::Birp => NoteKind::Birp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Basic,
    ZeroShot,
    OneShot,
    Structured,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Basic => Strategy::Basic,
            StrategyArg::ZeroShot => Strategy::ZeroShot,
            StrategyArg::OneShot => Strategy::OneShot,
            StrategyArg::Structured => Strategy::Structured,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RefineModeArg {
    Initial,
    Conditional,
    TwoStep,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the local speaker classifier from diarized transcripts.
    Train {
        /// Diarized transcript files (`[0] ... [1] ...`).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: u32,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attribute each sentence of a raw transcript to clinician or patient.
    Diarize {
        input: PathBuf,
        #[arg(long, conflicts_with = "llm", required_unless_present = "llm")]
        model: Option<PathBuf>,
        /// Use the backend from --config instead of a local model.
        #[arg(long, requires = "config")]
        llm: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Diarized reference transcript; prints accuracy, precision, recall and F1.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Generate a note from a diarized transcript.
    Generate {
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_enum, default_value = "structured")]
        strategy: StrategyArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Call ledger path (default: `<output>.ledger.jsonl`).
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Create or update a patient's note history from a new encounter.
    Refine {
        input: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long, value_enum)]
        mode: RefineModeArg,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Note kind for `--mode initial`.
        #[arg(long, value_enum, default_value = "soap")]
        kind: KindArg,
        /// Strategy for `--mode initial`.
        #[arg(long, value_enum, default_value = "structured")]
        strategy: StrategyArg,
        /// Supplementary text documents for this encounter.
        #[arg(long = "document")]
        documents: Vec<PathBuf>,
        /// Call ledger path (default: `<store>/<patient>.calls.jsonl`, appended).
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Score candidate notes against references with ROUGE-1 F1.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Per-sample CSV; aggregates go to `<stem>_aggregates.csv` next to it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Show a patient's note versions.
    History {
        #[arg(long)]
        patient: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        verify: bool,
    },
    /// Write the JSON Schema for a note kind.
    Schema {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Scan a note for personally identifiable information.
    RedactCheck { input: PathBuf },
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug)]
pub(crate) struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    pub(crate) fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

type CmdResult = Result<i32, Failure>;

pub(crate) fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads a diarized transcript, either tagged text or JSON-lines records.
fn read_transcript(path: &Path, code: i32) -> Result<DiarizedTranscript, Failure> {
    let source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let parsed = if path.extension().is_some_and(|e| e == "jsonl") {
        let f = fs::File::open(path).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
        ingest_records(std::io::BufReader::new(f))
    } else {
        parse_diarized(&read_text(path)?, source_id)
    };
    parsed.map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))
}

fn write_ledger(path: &Path, ledger: &CallLedger, append: bool) -> Result<(), Failure> {
    let mut buf = Vec::new();
    ledger.write_jsonl(&mut buf).expect("writing to memory");
    if append {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))?;
        f.write_all(&buf).map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
    } else {
        write_file(path, buf)
    }
}

/// Sentence segments of each utterance, labelled with its speaker.
fn labelled_segments(t: &DiarizedTranscript) -> Result<Vec<(String, SpeakerLabel)>, Failure> {
    let mut out = Vec::new();
    for u in t.utterances() {
        let segs = segment_text(u.text()).map_err(|e| Failure::new(EXIT_CLASSIFY, e.to_string()))?;
        out.extend(segs.into_iter().map(|s| (s, u.speaker())));
    }
    Ok(out)
}

fn cmd_train(inputs: &[PathBuf], output: &Path, cfg: TrainingConfig, out: &mut dyn Write) -> CmdResult {
    let mut examples = Vec::new();
    for p in inputs {
        examples.extend(labelled_segments(&read_transcript(p, EXIT_CLASSIFY)?)?);
    }
    let model = ClassifierModel::train_on_texts(&examples, &cfg).map_err(|e| Failure::new(EXIT_CLASSIFY, e.to_string()))?;
    write_file(output, model.to_json())?;
    let _ = writeln!(out, "trained on {} segments, vocabulary {}", examples.len(), model.vocabulary().len());
    Ok(EXIT_OK)
}

fn cmd_diarize(
    input: &Path,
    model: Option<&Path>,
    config: Option<&Path>,
    output: &Path,
    gold: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let text = read_text(input)?;
    let source_id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let raw = RawTranscript::new(text, source_id).map_err(|e| Failure::new(EXIT_CLASSIFY, e.to_string()))?;
    let gold = gold.map(|g| read_transcript(g, EXIT_CLASSIFY)).transpose()?;
    let diarized = match (model, config) {
        (Some(m), _) => {
            let model = ClassifierModel::from_json(&read_text(m)?)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", m.display())))?;
            classify_transcript(&model, &raw).map_err(|e| Failure::new(EXIT_CLASSIFY, e.to_string()))?
        }
        (None, Some(c)) => {
            let cfg = RunConfig::load(c)?;
            let gw = cfg.gateway(cfg.clock().shared())?;
            let result = classify_with_llm(&gw, &raw);
            write_ledger(&with_suffix(output, ".ledger.jsonl"), gw.ledger(), false)?;
            result.map_err(|e| Failure::new(EXIT_CLASSIFY, e.to_string()))?
        }
        (None, None) => return Err(Failure::new(EXIT_USAGE, "either --model or --llm is required")),
    };
    write_file(output, format!("{}\n", render_diarized(&diarized)))?;
    if let Some(gold) = gold {
        let pred: Vec<SpeakerLabel> = labelled_segments(&diarized)?.into_iter().map(|(_, l)| l).collect();
        let golds: Vec<SpeakerLabel> = labelled_segments(&gold)?.into_iter().map(|(_, l)| l).collect();
        let cm = confusion(&pred, &golds).map_err(|e| Failure::new(EXIT_CLASSIFY, format!("cannot compare with gold: {e}")))?;
        let m = ClassificationMetrics::from_matrix(&cm);
        let _ = writeln!(out, "accuracy {:.6}", m.accuracy);
        let _ = writeln!(out, "precision {:.6}", m.precision);
        let _ = writeln!(out, "recall {:.6}", m.recall);
        let _ = writeln!(out, "f1 {:.6}", m.f1);
    }
    Ok(EXIT_OK)
}

fn violations_json(v: &[crate::notes::Violation]) -> String {
    serde_json::to_string(v).expect("violations serialize")
}

fn cmd_generate(
    input: &Path,
    kind: NoteKind,
    strategy: Strategy,
    config: &Path,
    output: &Path,
    ledger: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let transcript = read_transcript(input, EXIT_IO)?;
    let cfg = RunConfig::load(config)?;
    let gw = cfg.gateway(cfg.clock().shared())?;
    let template = PromptTemplate::builtin(strategy, kind);
    let result = complete_note(&gw, &template, &transcript);
    let ledger_path = ledger.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(output, ".ledger.jsonl"));
    write_ledger(&ledger_path, gw.ledger(), false)?;
    let outcome = match result {
        Ok(o) => o,
        Err(GenerationError::InvalidNoteAfterRepair { first, second, .. }) => {
            return Err(Failure::new(
                EXIT_INVALID_NOTE,
                format!(
                    "note invalid after one repair\nfirst attempt: {}\nsecond attempt: {}",
                    violations_json(&first),
                    violations_json(&second)
                ),
            ))
        }
        Err(GenerationError::Prompt(e)) => return Err(Failure::new(EXIT_IO, e.to_string())),
        Err(e) => return Err(Failure::new(EXIT_BACKEND, e.to_string())),
    };
    write_file(output, note_file_bytes(&outcome.note))?;
    let provenance = json!({
        "kind": kind,
        "strategy": strategy,
        "backend": gw.id(),
        "model_id": gw.config().model_id,
        "transcript_hash": transcript.content_hash(),
        "request_ids": outcome.request_ids,
        "prompt_hashes": outcome.prompt_hashes,
        "repaired": outcome.repaired,
    });
    write_file(&with_suffix(output, ".provenance.json"), note_file_bytes(&provenance))?;
    let _ = writeln!(out, "wrote {} ({} backend call(s))", output.display(), outcome.request_ids.len());
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_refine(
    input: &Path,
    patient: &str,
    mode: RefineModeArg,
    store_dir: &Path,
    config: &Path,
    kind: NoteKind,
    strategy: Strategy,
    documents: &[PathBuf],
    ledger: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let transcript = read_transcript(input, EXIT_IO)?;
    let docs = documents.iter().map(|d| read_text(d)).collect::<Result<Vec<_>, _>>()?;
    let cfg = RunConfig::load(config)?;
    let clock = cfg.clock();
    let store = NoteStore::open(store_dir, clock.shared()).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let refine_fail = |e: RefineError| match e {
        RefineError::BrokenChain(b) => Failure::new(EXIT_BROKEN_CHAIN, b.to_string()),
        RefineError::Io(m) => Failure::new(EXIT_IO, m),
        e => Failure::new(EXIT_REFINE, e.to_string()),
    };
    let latest = store.latest(patient).map_err(refine_fail)?;
    if let Some(v) = &latest {
        cfg.resume_after(&clock, v.created_at);
    }
    let gw = cfg.gateway(clock.shared())?;
    let encounter = EncounterData { transcript, documents: docs, received_at: clock.now() };
    let result = match mode {
        RefineModeArg::Initial => {
            initial_version(&store, &gw, patient, &PromptTemplate::builtin(strategy, kind), &encounter)
        }
        RefineModeArg::Conditional => conditional_update(&store, &gw, patient, &encounter),
        RefineModeArg::TwoStep => two_step(&store, &gw, patient, &encounter),
    };
    let ledger_path = ledger.map(Path::to_path_buf).unwrap_or_else(|| store_dir.join(format!("{patient}.calls.jsonl")));
    write_ledger(&ledger_path, gw.ledger(), true)?;
    let version = result.map_err(refine_fail)?;
    let _ = writeln!(out, "version {} {}", version.version_no, version.self_hash);
    Ok(EXIT_OK)
}

fn cmd_history(patient: &str, store_dir: &Path, verify: bool, out: &mut dyn Write) -> CmdResult {
    let store =
        NoteStore::open(store_dir, Arc::new(crate::clock::SystemClock)).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    if verify {
        match store.verify_chain(patient).map_err(|e| Failure::new(EXIT_IO, e.to_string()))? {
            ChainStatus::Broken(b) => return Err(Failure::new(EXIT_BROKEN_CHAIN, b.to_string())),
            ChainStatus::Ok { versions } => {
                let _ = writeln!(out, "chain ok ({versions} versions)");
            }
        }
    }
    let history = store.history(patient).map_err(|e| match e {
        RefineError::BrokenChain(b) => Failure::new(EXIT_BROKEN_CHAIN, b.to_string()),
        e => Failure::new(EXIT_IO, e.to_string()),
    })?;
    let _ = writeln!(out, "{:<8} {:<25} {:<18} self_hash", "version", "created_at", "mode");
    for v in history {
        let _ = writeln!(
            out,
            "{:<8} {:<25} {:<18} {}",
            v.version_no,
            v.created_at.to_string(),
            v.provenance.mode.to_string(),
            &v.self_hash[..12]
        );
    }
    Ok(EXIT_OK)
}

fn cmd_schema(kind: NoteKind, output: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let schema = schema_json(kind);
    match output {
        Some(p) => write_file(p, schema)?,
        None => {
            let _ = out.write_all(schema.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

/// String leaves of a JSON document with their pointers.
fn string_leaves(v: &Value, path: String, acc: &mut Vec<(String, String)>) {
    match v {
        Value::String(s) => acc.push((path, s.clone())),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                string_leaves(item, format!("{path}/{i}"), acc);
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                string_leaves(item, format!("{path}/{}", k.replace('~', "~0").replace('/', "~1")), acc);
            }
        }
        _ => {}
    }
}

fn cmd_redact_check(input: &Path, out: &mut dyn Write) -> CmdResult {
    let text = read_text(input)?;
    let mut fields = Vec::new();
    match serde_json::from_str::<Value>(&text) {
        Ok(doc) => string_leaves(&doc, String::new(), &mut fields),
        Err(_) => fields.push((String::new(), text)),
    }
    let mut count = 0;
    for (path, value) in &fields {
        for f in scan_pii(value) {
            count += 1;
            let at = if path.is_empty() { "/" } else { path };
            let _ = writeln!(out, "{at}: {} at characters {}..{}", f.category, f.span.0, f.span.1);
        }
    }
    if count == 0 {
        let _ = writeln!(out, "no PII found");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "{count} finding(s)");
        Ok(EXIT_PII)
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CmdResult {
    match cli.command {
        Command::Train { inputs, output, epochs, learning_rate, l2, seed } => {
            cmd_train(&inputs, &output, TrainingConfig { learning_rate, epochs, l2, seed }, out)
        }
        Command::Diarize { input, model, llm: _, config, output, gold } => {
            cmd_diarize(&input, model.as_deref(), config.as_deref(), &output, gold.as_deref(), out)
        }
        Command::Generate { input, kind, strategy, config, output, ledger } => {
            cmd_generate(&input, kind.into(), strategy.into(), &config, &output, ledger.as_deref(), out)
        }
        Command::Refine { input, patient, mode, store, config, kind, strategy, documents, ledger } => cmd_refine(
            &input,
            &patient,
            mode,
            &store,
            &config,
            kind.into(),
            strategy.into(),
            &documents,
            ledger.as_deref(),
            out,
        ),
        Command::Eval { candidates, references, output } => eval::cmd_eval(&candidates, &references, &output, out),
        Command::History { patient, store, verify } => cmd_history(&patient, &store, verify, out),
        Command::Schema { kind, output } => cmd_schema(kind.into(), output.as_deref(), out),
        Command::RedactCheck { input } => cmd_redact_check(&input, out),
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
            } else {
                let _ = out.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
