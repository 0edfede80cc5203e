//! Prompt rendering for note generation, refinement and speaker tagging.
//!
//! Wording lives in versioned resource files (see [`PromptLibrary`]); this
//! module only assembles the blocks. User text is laid out as labelled
//! blocks separated by blank lines, e.g.
//!
//! ```text
//! Transcript:
//! [0] ... [1] ...
//!
//! Instructions:
//! Based on the above transcript, ...
//! ```

mod chain;
mod ensemble;
mod library;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::prompt_hash;
use crate::notes::{note_file_bytes, schema_for, validate_note, NoteKind, Violation};
use crate::transcript::{render_diarized, DiarizedTranscript, RawTranscript};

pub use chain::{build_chain, ChainMode, ChainPlan, ChainStage, Role, StagePrompt};
pub use ensemble::{combine_ensemble, Combiner, EnsembleChoice, EnsembleSpec};
pub use library::{Manifest, ManifestEntry, PromptLibrary, PromptResource, MANIFEST_FILE, REQUIRED_RESOURCES};

/// Present in every rendered prompt.
pub const CONFIDENTIALITY_CLAUSE: &str = "patient confidentiality by avoiding the use of any personally identifiable information";

pub const MAX_EXEMPLARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("one-shot template has no exemplar")]
    MissingExemplar,
    #[error("structured template has no schema")]
    MissingSchema,
    #[error("{0} exemplars exceed the limit of 3")]
    TooManyExemplars(usize),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("transcript occurs {0} times in the rendered prompt; expected exactly once")]
    TranscriptNotUnique(usize),
    #[error("prompt resource `{0}` is missing")]
    MissingResource(String),
    #[error("invalid prompt manifest: {0}")]
    Manifest(String),
    #[error("prompt resource I/O: {0}")]
    Io(String),
    #[error("invalid chain plan: {0}")]
    InvalidChain(String),
    #[error("ensemble needs at least two members")]
    TooFewMembers,
    #[error("no candidate validates against the {0} schema")]
    NoValidCandidates(NoteKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Basic,
    ZeroShot,
    OneShot,
    Structured,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Basic, Strategy::ZeroShot, Strategy::OneShot, Strategy::Structured];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::ZeroShot => "zero-shot",
            Strategy::OneShot => "one-shot",
            Strategy::Structured => "structured",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == norm || st.as_str().replace('-', "") == norm)
            .ok_or_else(|| PromptError::InvalidTemplate(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub transcript: String,
    pub note: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub strategy: Strategy,
    pub kind: NoteKind,
    pub system_text: String,
    /// Empty for [`Strategy::Basic`].
    pub formatting_instructions: String,
    /// Non-empty only for [`Strategy::OneShot`].
    pub exemplars: Vec<Exemplar>,
    /// Only for [`Strategy::Structured`].
    pub schema: Option<Value>,
    pub instructions: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    /// `None` for prompts that are not note-generation strategies.
    pub strategy: Option<Strategy>,
    pub label: String,
    pub content_hash: String,
}

impl RenderedPrompt {
    pub fn new(label: impl Into<String>, strategy: Option<Strategy>, system_text: String, user_text: String) -> Self {
        let content_hash = prompt_hash(&system_text, &user_text);
        Self { system_text, user_text, strategy, label: label.into(), content_hash }
    }
}

pub(crate) fn fill(text: &str, kind: NoteKind) -> String {
    text.replace("{{kind}}", kind.as_str()).replace("{{sections}}", kind.section_phrase())
}

fn kind_resource(prefix: &str, kind: NoteKind) -> String {
    format!("{prefix}_{}", kind.as_str().to_ascii_lowercase())
}

fn block(label: &str, body: &str) -> String {
    format!("{label}:\n{body}")
}

fn schema_text(kind: NoteKind) -> String {
    serde_json::to_string_pretty(&schema_for(kind)).expect("schema serializes")
}

fn note_text(note: &Value) -> String {
    note_file_bytes(note).trim_end().to_string()
}

impl PromptTemplate {
    /// Template for `strategy` using the compiled-in wording.
    pub fn builtin(strategy: Strategy, kind: NoteKind) -> Self {
        Self::from_library(PromptLibrary::builtin(), strategy, kind).expect("builtin library is complete")
    }

    pub fn from_library(lib: &PromptLibrary, strategy: Strategy, kind: NoteKind) -> Result<Self, PromptError> {
        let instructions = match strategy {
            Strategy::Basic => "instruction_basic",
            Strategy::ZeroShot => "instruction_zero_shot",
            Strategy::OneShot => "instruction_one_shot",
            Strategy::Structured => "instruction_structured",
        };
        let formatting = match strategy {
            Strategy::Basic => String::new(),
            _ => fill(lib.get(&kind_resource("formatting", kind))?, kind),
        };
        let exemplars = match strategy {
            Strategy::OneShot => {
                let note = lib.get(&(kind_resource("exemplar", kind) + "_note"))?;
                vec![Exemplar {
                    transcript: lib.get(&(kind_resource("exemplar", kind) + "_transcript"))?.to_string(),
                    note: serde_json::from_str(note).map_err(|e| PromptError::InvalidTemplate(format!("exemplar note: {e}")))?,
                }]
            }
            _ => Vec::new(),
        };
        Ok(Self {
            strategy,
            kind,
            system_text: fill(lib.get("system")?, kind),
            formatting_instructions: formatting,
            exemplars,
            schema: (strategy == Strategy::Structured).then(|| schema_for(kind)),
            instructions: fill(lib.get(instructions)?, kind),
        })
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |m: &str| Err(PromptError::InvalidTemplate(m.to_string()));
        if self.exemplars.len() > MAX_EXEMPLARS {
            return Err(PromptError::TooManyExemplars(self.exemplars.len()));
        }
        if self.strategy == Strategy::OneShot && self.exemplars.is_empty() {
            return Err(PromptError::MissingExemplar);
        }
        if self.strategy != Strategy::OneShot && !self.exemplars.is_empty() {
            return invalid("only one-shot templates carry exemplars");
        }
        match (self.strategy, &self.schema) {
            (Strategy::Structured, None) => return Err(PromptError::MissingSchema),
            (Strategy::Structured, Some(_)) => {}
            (_, Some(_)) => return invalid("only structured templates carry a schema"),
            _ => {}
        }
        if (self.strategy == Strategy::Basic) != self.formatting_instructions.is_empty() {
            return invalid("formatting instructions must be empty exactly for the basic strategy");
        }
        if self.system_text.trim().is_empty() || self.instructions.trim().is_empty() {
            return invalid("system text and instructions must be non-empty");
        }
        for ex in &self.exemplars {
            if !validate_note(&ex.note, self.kind).is_ok() {
                return invalid("exemplar note does not validate against the note schema");
            }
        }
        Ok(())
    }
}

fn ensure_unique(user_text: &str, transcript: &str) -> Result<(), PromptError> {
    match user_text.matches(transcript).count() {
        1 => Ok(()),
        n => Err(PromptError::TranscriptNotUnique(n)),
    }
}

/// Renders a note-generation prompt for `transcript`.
pub fn render(template: &PromptTemplate, transcript: &DiarizedTranscript) -> Result<RenderedPrompt, PromptError> {
    template.validate()?;
    let t = render_diarized(transcript);
    let mut blocks = Vec::new();
    if template.strategy != Strategy::Basic {
        blocks.push(block("Formatting instructions", &template.formatting_instructions));
    }
    for (i, ex) in template.exemplars.iter().enumerate() {
        blocks.push(format!("Example {}:\n{}\n\n{}", i + 1, block("Transcript", &ex.transcript), block("Note", &note_text(&ex.note))));
    }
    if let Some(schema) = &template.schema {
        blocks.push(block("JSON Schema", &serde_json::to_string_pretty(schema).expect("schema serializes")));
    }
    blocks.push(block("Transcript", &t));
    blocks.push(block("Instructions", &template.instructions));
    let user = blocks.join("\n\n");
    ensure_unique(&user, &t)?;
    let label = format!("generate:{}:{}", template.kind, template.strategy);
    Ok(RenderedPrompt::new(label, Some(template.strategy), template.system_text.clone(), user))
}

fn documents_block(documents: &[String]) -> Option<String> {
    if documents.is_empty() {
        return None;
    }
    let body: Vec<String> = documents.iter().enumerate().map(|(i, d)| format!("[Document {}]\n{}", i + 1, d.trim())).collect();
    Some(block("Supplementary documents", &body.join("\n\n")))
}

/// Single-shot update of an existing note from a new encounter.
pub fn render_conditional(
    lib: &PromptLibrary,
    kind: NoteKind,
    prior_note: &Value,
    transcript: &DiarizedTranscript,
    documents: &[String],
) -> Result<RenderedPrompt, PromptError> {
    let t = render_diarized(transcript);
    let mut blocks = vec![
        block("JSON Schema", &schema_text(kind)),
        block(&format!("Existing {kind} Note"), &note_text(prior_note)),
        block("New Transcript", &t),
    ];
    blocks.extend(documents_block(documents));
    blocks.push(block("Instructions", &fill(lib.get("conditional")?, kind)));
    let user = blocks.join("\n\n");
    ensure_unique(&user, &t)?;
    Ok(RenderedPrompt::new(format!("refine:{kind}:conditional"), None, fill(lib.get("system")?, kind), user))
}

/// First refinement step: pull the new relevant facts out of an encounter.
pub fn render_extract(
    lib: &PromptLibrary,
    kind: NoteKind,
    transcript: &DiarizedTranscript,
    documents: &[String],
) -> Result<RenderedPrompt, PromptError> {
    let t = render_diarized(transcript);
    let mut blocks = vec![block("New Transcript", &t)];
    blocks.extend(documents_block(documents));
    blocks.push(block("Instructions", &fill(lib.get("extract")?, kind)));
    let user = blocks.join("\n\n");
    ensure_unique(&user, &t)?;
    Ok(RenderedPrompt::new(format!("refine:{kind}:extract"), None, fill(lib.get("system")?, kind), user))
}

/// Second refinement step: merge an extracted summary into the prior note.
pub fn render_integrate(
    lib: &PromptLibrary,
    kind: NoteKind,
    prior_note: &Value,
    summary: &Value,
) -> Result<RenderedPrompt, PromptError> {
    let summary_text = serde_json::to_string_pretty(summary).expect("summary serializes");
    let user = [
        block("JSON Schema", &schema_text(kind)),
        block(&format!("Existing {kind} Note"), &note_text(prior_note)),
        block("New Information Summary", &summary_text),
        block("Instructions", &fill(lib.get("integrate")?, kind)),
    ]
    .join("\n\n");
    Ok(RenderedPrompt::new(format!("refine:{kind}:integrate"), None, fill(lib.get("system")?, kind), user))
}

/// Asks for `[0]`/`[1]` speaker tags on an undiarized transcript.
pub fn render_classification(lib: &PromptLibrary, raw: &RawTranscript) -> Result<RenderedPrompt, PromptError> {
    let user = [block("Transcript", raw.text().trim()), block("Instructions", lib.get("classify")?)].join("\n\n");
    Ok(RenderedPrompt::new("classify", None, lib.get("classify_system")?.to_string(), user))
}

fn with_repair(original: &RenderedPrompt, label: &str, previous: &str, mut tail: Vec<String>) -> RenderedPrompt {
    let mut blocks = vec![original.user_text.clone(), block("Previous response", previous.trim())];
    blocks.append(&mut tail);
    RenderedPrompt::new(
        format!("{}:{label}", original.label),
        original.strategy,
        original.system_text.clone(),
        blocks.join("\n\n"),
    )
}

/// Follow-up to a note prompt whose completion failed validation.
pub fn render_note_repair(
    lib: &PromptLibrary,
    original: &RenderedPrompt,
    kind: NoteKind,
    previous: &str,
    violations: &[Violation],
) -> Result<RenderedPrompt, PromptError> {
    let list: Vec<String> = violations.iter().map(|v| format!("- {v}")).collect();
    Ok(with_repair(
        original,
        "repair",
        previous,
        vec![
            block("Repair instructions", &fill(lib.get("repair_note")?, kind)),
            block("Violations", &list.join("\n")),
            block("JSON Schema", &schema_text(kind)),
        ],
    ))
}

/// Follow-up to an extraction prompt whose completion could not be read.
pub fn render_summary_repair(
    lib: &PromptLibrary,
    original: &RenderedPrompt,
    previous: &str,
    error: &str,
) -> Result<RenderedPrompt, PromptError> {
    Ok(with_repair(
        original,
        "repair",
        previous,
        vec![block("Repair instructions", lib.get("repair_summary")?), block("Error", error)],
    ))
}

/// Follow-up to a speaker-tagging prompt whose completion did not parse.
pub fn render_transcript_repair(
    lib: &PromptLibrary,
    original: &RenderedPrompt,
    previous: &str,
    error: &str,
) -> Result<RenderedPrompt, PromptError> {
    Ok(with_repair(
        original,
        "repair",
        previous,
        vec![block("Repair instructions", lib.get("repair_transcript")?), block("Parser error", error)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{parse_diarized, SpeakerLabel};
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    const EVE: &str = "[0] Hi, Eve. Good to see you again. [1] Hi.";

    fn eve() -> DiarizedTranscript {
        parse_diarized(EVE, "t").unwrap()
    }

    #[test]
    fn basic_prompt_wording() {
        let p = render(&PromptTemplate::builtin(Strategy::Basic, NoteKind::Soap), &eve()).unwrap();
        assert!(p.user_text.contains("[0] Hi, Eve."));
        assert!(p.user_text.contains("Subjective, Objective, Assessment, and Plan"));
        assert!(p.user_text.starts_with("Transcript:\n[0] Hi, Eve."));
        assert!(!p.user_text.contains("Formatting instructions"));
        assert_eq!(p.strategy, Some(Strategy::Basic));
        let birp = render(&PromptTemplate::builtin(Strategy::Basic, NoteKind::Birp), &eve()).unwrap();
        assert!(birp.user_text.contains("BIRP note following the Behavior, Intervention, Response, and Plan format"));
    }

    #[test]
    fn structured_prompt_carries_schema() {
        let p = render(&PromptTemplate::builtin(Strategy::Structured, NoteKind::Soap), &eve()).unwrap();
        assert!(p.user_text.contains("chiefComplaint"));
        assert!(p.user_text.contains("JSON Schema:\n{"));
        assert!(p.user_text.contains("nothing else"));
    }

    #[test]
    fn one_shot_needs_exemplar() {
        let mut t = PromptTemplate::builtin(Strategy::OneShot, NoteKind::Birp);
        let p = render(&t, &eve()).unwrap();
        assert!(p.user_text.contains("Example 1:\nTranscript:\n[0] Welcome back."));
        t.exemplars.clear();
        assert_eq!(render(&t, &eve()), Err(PromptError::MissingExemplar));
        let ex = PromptTemplate::builtin(Strategy::OneShot, NoteKind::Birp).exemplars[0].clone();
        t.exemplars = vec![ex; 4];
        assert_eq!(render(&t, &eve()), Err(PromptError::TooManyExemplars(4)));
    }

    #[test]
    fn structured_without_schema() {
        let mut t = PromptTemplate::builtin(Strategy::Structured, NoteKind::Soap);
        t.schema = None;
        assert_eq!(render(&t, &eve()), Err(PromptError::MissingSchema));
        let mut t = PromptTemplate::builtin(Strategy::Basic, NoteKind::Soap);
        t.formatting_instructions = "x".into();
        assert!(matches!(render(&t, &eve()), Err(PromptError::InvalidTemplate(_))));
    }

    #[test]
    fn builtin_exemplars_validate() {
        for kind in NoteKind::ALL {
            let t = PromptTemplate::builtin(Strategy::OneShot, kind);
            assert!(t.validate().is_ok());
            parse_diarized(&t.exemplars[0].transcript, "ex").unwrap();
        }
    }

    #[test]
    fn transcript_equal_to_exemplar_is_rejected() {
        let t = PromptTemplate::builtin(Strategy::OneShot, NoteKind::Soap);
        let same = parse_diarized(&t.exemplars[0].transcript, "x").unwrap();
        assert_eq!(render(&t, &same), Err(PromptError::TranscriptNotUnique(2)));
    }

    #[test]
    fn strategies_differ_in_hash() {
        let hashes: std::collections::BTreeSet<_> = Strategy::ALL
            .iter()
            .map(|s| render(&PromptTemplate::builtin(*s, NoteKind::Soap), &eve()).unwrap().content_hash)
            .collect();
        assert_eq!(hashes.len(), 4);
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("zero_shot".parse::<Strategy>().unwrap(), Strategy::ZeroShot);
        assert_eq!("OneShot".parse::<Strategy>().unwrap(), Strategy::OneShot);
        assert!("few-shot".parse::<Strategy>().is_err());
    }

    #[test]
    fn refinement_prompts() {
        let lib = PromptLibrary::builtin();
        let note = crate::notes::ClinicalNote::Soap(crate::notes::fixtures::soap()).to_json();
        let p = render_conditional(lib, NoteKind::Soap, &note, &eve(), &["Lab: normal".into()]).unwrap();
        assert!(p.user_text.contains(&note_text(&note)));
        assert!(p.user_text.contains(EVE));
        assert!(p.user_text.contains("Existing SOAP Note:\n"));
        assert!(p.user_text.find(EVE).unwrap() < p.user_text.find("[Document 1]\nLab: normal").unwrap());
        let e = render_extract(lib, NoteKind::Soap, &eve(), &[]).unwrap();
        assert!(e.user_text.contains("plan_change"));
        let i = render_integrate(lib, NoteKind::Soap, &note, &serde_json::json!([])).unwrap();
        assert!(i.user_text.contains("New Information Summary:\n[]"));
        for p in [p, e, i] {
            assert!(p.user_text.contains(CONFIDENTIALITY_CLAUSE), "{}", p.label);
        }
    }

    #[test]
    fn repair_lists_violations_and_schema() {
        let lib = PromptLibrary::builtin();
        let orig = render(&PromptTemplate::builtin(Strategy::Basic, NoteKind::Soap), &eve()).unwrap();
        let v = crate::notes::validate_note(&serde_json::json!({}), NoteKind::Soap).violations;
        let r = render_note_repair(lib, &orig, NoteKind::Soap, "prose", &v).unwrap();
        assert!(r.user_text.starts_with(&orig.user_text));
        assert!(r.user_text.contains("- /subjective: required-missing"));
        assert!(r.user_text.contains("chiefComplaint"));
        assert_ne!(r.content_hash, orig.content_hash);
    }

    fn transcript_strategy() -> impl proptest::strategy::Strategy<Value = DiarizedTranscript> {
        prop::collection::vec(("[a-z]{1,8}( [a-z]{1,8}){0,6}[.?]?", any::<bool>()), 1..8).prop_map(|runs| {
            let runs = runs.into_iter().map(|(t, p)| (if p { SpeakerLabel::Patient } else { SpeakerLabel::Clinician }, t));
            DiarizedTranscript::new("p", runs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn every_prompt_contains_transcript_once_and_clause(t in transcript_strategy(), kind_birp in any::<bool>()) {
            let kind = if kind_birp { NoteKind::Birp } else { NoteKind::Soap };
            for s in Strategy::ALL {
                let template = PromptTemplate::builtin(s, kind);
                let a = render(&template, &t).unwrap();
                let b = render(&template, &t).unwrap();
                prop_assert_eq!(&a.content_hash, &b.content_hash);
                prop_assert_eq!(a.user_text.matches(&render_diarized(&t)).count(), 1);
                prop_assert!(a.user_text.contains(CONFIDENTIALITY_CLAUSE));
            }
        }
    }
}
