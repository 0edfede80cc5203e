//! Note refinement across encounters.
//!
//! A patient's first note is committed as an `initial` version. Later
//! encounters update it either in one call ([`conditional_update`]) or in two
//! ([`extract_relevant`] then [`integrate`], driven by [`two_step`]). Every
//! result lands in the hash-chained [`NoteStore`].

mod store;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Timestamp;
use crate::gateway::{complete_validated, extract_json_array, Gateway, GatewayError, GenerationError, NoteOutcome};
use crate::notes::{validate_against, NoteKind, Violation};
use crate::prompts::{
    build_chain, render, render_conditional, render_extract, render_integrate, render_summary_repair, ChainMode,
    PromptError, PromptLibrary, PromptTemplate, StagePrompt,
};
use crate::transcript::DiarizedTranscript;

pub use store::{
    ChainBreak, ChainStatus, EncounterRecord, NoteStore, NoteVersion, Provenance, RefineMode, StoreHeader, STORE_FORMAT,
    STORE_SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("invalid patient id `{0}`")]
    InvalidPatientId(String),
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("patient `{0}` already has a note history")]
    PatientExists(String),
    #[error("note failed validation with {} violation(s)", .0.len())]
    ValidationFailed(Vec<Violation>),
    #[error("clock skew: new timestamp {now} is not after {last}")]
    ClockSkew { last: Timestamp, now: Timestamp },
    #[error("stored notes are {stored}, got a {given} note")]
    KindMismatch { stored: NoteKind, given: NoteKind },
    #[error("summary was extracted from a different transcript")]
    SummaryMismatch,
    #[error("{0}")]
    BrokenChain(ChainBreak),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("backend error: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("summary unreadable after one repair: {first}; then {second}")]
    UnparseableSummary { first: String, second: String },
    #[error("store I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncounterData {
    pub transcript: DiarizedTranscript,
    pub documents: Vec<String>,
    pub received_at: Timestamp,
}

impl EncounterData {
    pub fn new(transcript: DiarizedTranscript, received_at: Timestamp) -> Self {
        Self { transcript, documents: Vec::new(), received_at }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceCategory {
    Symptom,
    Finding,
    Assessment,
    PlanChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceItem {
    pub category: RelevanceCategory,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelevanceSummary {
    pub items: Vec<RelevanceItem>,
    pub source_hash: String,
    #[serde(skip)]
    pub request_ids: Vec<String>,
    #[serde(skip)]
    pub prompt_hashes: Vec<String>,
}

/// JSON Schema for the extraction reply.
pub fn summary_schema() -> Value {
    json!({
        "type": "array",
        "items": {
            "type": "object",
            "properties": {
                "category": {"type": "string", "enum": ["symptom", "finding", "assessment", "plan_change"]},
                "text": {"type": "string", "minLength": 1},
            },
            "required": ["category", "text"],
            "additionalProperties": false,
        },
    })
}

fn parse_summary(text: &str) -> Result<Vec<RelevanceItem>, String> {
    let doc = extract_json_array(text).ok_or("no JSON array found in the response")?;
    let result = validate_against(&doc, &summary_schema());
    if !result.is_ok() {
        let list: Vec<String> = result.violations.iter().map(ToString::to_string).collect();
        return Err(list.join("; "));
    }
    let items: Vec<RelevanceItem> = serde_json::from_value(doc).map_err(|e| e.to_string())?;
    if items.iter().any(|i| i.text.trim().is_empty()) {
        return Err("item text must not be blank".into());
    }
    Ok(items)
}

fn provenance(mode: RefineMode, outcome: &NoteOutcome, extra: (&[String], &[String]), source: Option<String>) -> Provenance {
    Provenance {
        mode,
        strategy: outcome.strategy,
        request_ids: extra.0.iter().chain(&outcome.request_ids).cloned().collect(),
        prompt_hashes: extra.1.iter().chain(&outcome.prompt_hashes).cloned().collect(),
        source_transcript_hash: source,
    }
}

fn latest(store: &NoteStore, patient_id: &str) -> Result<NoteVersion, RefineError> {
    store.latest(patient_id)?.ok_or_else(|| RefineError::UnknownPatient(patient_id.to_string()))
}

/// Generates a patient's first note and commits it as version 1.
pub fn initial_version(
    store: &NoteStore,
    gateway: &Gateway,
    patient_id: &str,
    template: &PromptTemplate,
    encounter: &EncounterData,
) -> Result<NoteVersion, RefineError> {
    if !store.history(patient_id)?.is_empty() {
        return Err(RefineError::PatientExists(patient_id.to_string()));
    }
    let prompt = render(template, &encounter.transcript)?;
    let outcome = complete_validated(gateway, PromptLibrary::builtin(), &prompt, template.kind)?;
    let prov = provenance(RefineMode::Initial, &outcome, (&[], &[]), Some(encounter.transcript.content_hash()));
    store.commit(patient_id, &outcome.note, template.kind, prov, Some(encounter))
}

/// Regenerates the note from the latest version plus the new encounter.
pub fn conditional_update(
    store: &NoteStore,
    gateway: &Gateway,
    patient_id: &str,
    encounter: &EncounterData,
) -> Result<NoteVersion, RefineError> {
    let prior = latest(store, patient_id)?;
    let lib = PromptLibrary::builtin();
    let prompt = render_conditional(lib, prior.kind, &prior.note, &encounter.transcript, &encounter.documents)?;
    let outcome = complete_validated(gateway, lib, &prompt, prior.kind)?;
    let prov = provenance(RefineMode::Conditional, &outcome, (&[], &[]), Some(encounter.transcript.content_hash()));
    store.commit(patient_id, &outcome.note, prior.kind, prov, Some(encounter))
}

/// Asks for the new relevant facts in an encounter, with one repair call
/// if the reply is not a valid item list.
pub fn extract_relevant(
    gateway: &Gateway,
    kind: NoteKind,
    encounter: &EncounterData,
) -> Result<RelevanceSummary, RefineError> {
    let lib = PromptLibrary::builtin();
    let prompt = render_extract(lib, kind, &encounter.transcript, &encounter.documents)?;
    let mut request_ids = Vec::new();
    let mut prompt_hashes = vec![prompt.content_hash.clone()];
    let req = gateway.request(prompt.system_text.clone(), prompt.user_text.clone());
    request_ids.push(req.request_id.clone());
    let reply = gateway.complete(&req)?;
    let source_hash = encounter.transcript.content_hash();
    let first = match parse_summary(&reply.text) {
        Ok(items) => return Ok(RelevanceSummary { items, source_hash, request_ids, prompt_hashes }),
        Err(e) => e,
    };
    let repair = render_summary_repair(lib, &prompt, &reply.text, &first)?;
    prompt_hashes.push(repair.content_hash.clone());
    let req = gateway.request(repair.system_text, repair.user_text);
    request_ids.push(req.request_id.clone());
    let reply = gateway.complete(&req)?;
    match parse_summary(&reply.text) {
        Ok(items) => Ok(RelevanceSummary { items, source_hash, request_ids, prompt_hashes }),
        Err(second) => Err(RefineError::UnparseableSummary { first, second }),
    }
}

/// Merges a summary into the latest note. `encounter` is the one the
/// summary was extracted from; it is stored alongside the new version.
pub fn integrate(
    store: &NoteStore,
    gateway: &Gateway,
    patient_id: &str,
    summary: &RelevanceSummary,
    encounter: &EncounterData,
) -> Result<NoteVersion, RefineError> {
    if summary.source_hash != encounter.transcript.content_hash() {
        return Err(RefineError::SummaryMismatch);
    }
    let prior = latest(store, patient_id)?;
    let lib = PromptLibrary::builtin();
    let items = serde_json::to_value(&summary.items).expect("items serialize");
    let prompt = render_integrate(lib, prior.kind, &prior.note, &items)?;
    let outcome = complete_validated(gateway, lib, &prompt, prior.kind)?;
    let prov = provenance(
        RefineMode::ExtractIntegrate,
        &outcome,
        (&summary.request_ids, &summary.prompt_hashes),
        Some(summary.source_hash.clone()),
    );
    store.commit(patient_id, &outcome.note, prior.kind, prov, Some(encounter))
}

/// Runs the two-stage refinement plan (extract, then integrate).
pub fn two_step(
    store: &NoteStore,
    gateway: &Gateway,
    patient_id: &str,
    encounter: &EncounterData,
) -> Result<NoteVersion, RefineError> {
    let kind = latest(store, patient_id)?.kind;
    let plan = build_chain(kind, ChainMode::Refine);
    let mut summary = None;
    let mut committed = None;
    for stage in plan.stages() {
        match &stage.prompt {
            StagePrompt::Extract { kind } => summary = Some(extract_relevant(gateway, *kind, encounter)?),
            StagePrompt::Integrate { .. } => {
                let s = summary.as_ref().expect("plan validated: extract precedes integrate");
                committed = Some(integrate(store, gateway, patient_id, s, encounter)?);
            }
            StagePrompt::Note(_) => unreachable!("refine plans have no generation stage"),
        }
    }
    Ok(committed.expect("refine plan ends with integrate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppedClock;
    use crate::gateway::{BackendConfig, MockFixture, MockScript};
    use crate::notes::{fixtures, ClinicalNote};
    use crate::prompts::Strategy;
    use crate::transcript::parse_diarized;
    use std::sync::Arc;
    use std::time::Duration;

    struct Env {
        _dir: tempfile::TempDir,
        store: NoteStore,
        clock: Arc<SteppedClock>,
    }

    fn env() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SteppedClock::new("2024-03-01T09:00:00Z".parse().unwrap(), Duration::from_millis(250)));
        let store = NoteStore::open(dir.path(), clock.clone()).unwrap();
        Env { _dir: dir, store, clock }
    }

    fn gw(env: &Env, fixtures: Vec<String>) -> Gateway {
        let script = MockScript::ordered(fixtures.iter().map(|f| MockFixture::text(f)).collect());
        Gateway::new(BackendConfig::mock(script), env.clock.clone()).unwrap()
    }

    fn note() -> Value {
        ClinicalNote::Soap(fixtures::soap()).to_json()
    }

    fn encounter(env: &Env, text: &str) -> EncounterData {
        EncounterData::new(parse_diarized(text, "e").unwrap(), env.clock.peek())
    }

    fn seeded(env: &Env) -> NoteVersion {
        let g = gw(env, vec![note().to_string()]);
        let t = PromptTemplate::builtin(Strategy::Structured, NoteKind::Soap);
        initial_version(&env.store, &g, "p", &t, &encounter(env, "[0] First visit. [1] Hello.")).unwrap()
    }

    #[test]
    fn conditional_no_op_update() {
        let env = env();
        let v1 = seeded(&env);
        let g = gw(&env, vec![note().to_string()]);
        let enc = encounter(&env, "[0] How was the week? [1] About the same.");
        let v2 = conditional_update(&env.store, &g, "p", &enc).unwrap();
        assert_eq!(v2.version_no, 2);
        assert_eq!(crate::digest::canonical_json(&v2.note), crate::digest::canonical_json(&v1.note));
        assert_eq!(v2.provenance.mode, RefineMode::Conditional);
        assert_eq!(v2.provenance.request_ids.len(), 1);
        let stored = env.store.encounters("p").unwrap();
        assert_eq!(stored.len(), 2);
        assert_eq!(stored[1].transcript_hash, v2.provenance.source_transcript_hash.clone().unwrap());
    }

    #[test]
    fn failed_generation_commits_nothing() {
        let env = env();
        seeded(&env);
        let g = gw(&env, vec!["nope".into(), "still nope".into()]);
        let enc = encounter(&env, "[0] Hi. [1] Hi.");
        assert!(matches!(
            conditional_update(&env.store, &g, "p", &enc),
            Err(RefineError::Generation(GenerationError::InvalidNoteAfterRepair { .. }))
        ));
        assert_eq!(env.store.history("p").unwrap().len(), 1);
        assert_eq!(env.store.encounters("p").unwrap().len(), 1);
    }

    #[test]
    fn unknown_patient() {
        let env = env();
        let g = gw(&env, vec![note().to_string()]);
        let enc = encounter(&env, "[0] Hi. [1] Hi.");
        assert!(matches!(conditional_update(&env.store, &g, "ghost", &enc), Err(RefineError::UnknownPatient(_))));
        assert!(matches!(two_step(&env.store, &g, "ghost", &enc), Err(RefineError::UnknownPatient(_))));
        assert_eq!(g.ledger().len(), 0);
    }

    #[test]
    fn extraction_replies() {
        let env = env();
        let enc = encounter(&env, "[0] Any change? [1] New headaches.");
        let g = gw(&env, vec!["[]".into()]);
        assert!(extract_relevant(&g, NoteKind::Soap, &enc).unwrap().items.is_empty());
        let g = gw(&env, vec![r#"Sure: [{"category": "symptom", "text": "New headaches"}]"#.into()]);
        let s = extract_relevant(&g, NoteKind::Soap, &enc).unwrap();
        assert_eq!(s.items, vec![RelevanceItem { category: RelevanceCategory::Symptom, text: "New headaches".into() }]);
        let g = gw(&env, vec![r#"[{"category": "mood", "text": "x"}]"#.into(), r#"[{"category": "finding", "text": "x"}]"#.into()]);
        let s = extract_relevant(&g, NoteKind::Soap, &enc).unwrap();
        assert_eq!(s.request_ids.len(), 2);
        assert_eq!(g.ledger().len(), 2);
        let g = gw(&env, vec!["no".into(), r#"[{"category": "finding", "text": ""}]"#.into()]);
        assert!(matches!(extract_relevant(&g, NoteKind::Soap, &enc), Err(RefineError::UnparseableSummary { .. })));
    }

    #[test]
    fn integrate_changes_only_plan() {
        let env = env();
        let v1 = seeded(&env);
        let mut updated = fixtures::soap();
        updated.plan.homework = "Daily headache log".into();
        let updated = ClinicalNote::Soap(updated).to_json();
        let g = gw(&env, vec![r#"[{"category": "plan_change", "text": "Start a headache log"}]"#.into(), updated.to_string()]);
        let enc = encounter(&env, "[0] Let's track the headaches. [1] Okay.");
        let v2 = two_step(&env.store, &g, "p", &enc).unwrap();
        assert_eq!(v2.version_no, 2);
        assert_eq!(v2.provenance.mode, RefineMode::ExtractIntegrate);
        assert_eq!(v2.provenance.request_ids.len(), 2);
        let diff: Vec<&str> = ["subjective", "objective", "assessment", "plan"]
            .into_iter()
            .filter(|s| v1.note[*s] != v2.note[*s])
            .collect();
        assert_eq!(diff, ["plan"]);
        assert_eq!(env.store.verify_chain("p").unwrap(), ChainStatus::Ok { versions: 2 });
    }

    #[test]
    fn summary_must_match_encounter() {
        let env = env();
        seeded(&env);
        let g = gw(&env, vec![note().to_string()]);
        let a = encounter(&env, "[0] A. [1] B.");
        let b = encounter(&env, "[0] C. [1] D.");
        let summary = RelevanceSummary { items: vec![], source_hash: a.transcript.content_hash(), request_ids: vec![], prompt_hashes: vec![] };
        assert!(matches!(integrate(&env.store, &g, "p", &summary, &b), Err(RefineError::SummaryMismatch)));
    }

    #[test]
    fn initial_twice_rejected() {
        let env = env();
        seeded(&env);
        let g = gw(&env, vec![note().to_string()]);
        let t = PromptTemplate::builtin(Strategy::Structured, NoteKind::Soap);
        let enc = encounter(&env, "[0] Again. [1] Yes.");
        assert!(matches!(initial_version(&env.store, &g, "p", &t, &enc), Err(RefineError::PatientExists(_))));
    }
}
