use serde::Serialize;
use serde_json::Value;

use super::{extract_json_object, Gateway, GatewayError};
use crate::notes::{validate_note, NoteKind, Violation, ViolationReason};
use crate::prompts::{render, render_note_repair, PromptError, PromptLibrary, PromptTemplate, RenderedPrompt, Strategy};
use crate::transcript::DiarizedTranscript;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoteOutcome {
    pub note: Value,
    pub kind: NoteKind,
    pub strategy: Option<Strategy>,
    pub request_ids: Vec<String>,
    pub prompt_hashes: Vec<String>,
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend call failed: {source}")]
    Gateway { source: GatewayError, request_ids: Vec<String> },
    #[error("note still invalid after one repair ({} then {} violations)", first.len(), second.len())]
    InvalidNoteAfterRepair { first: Vec<Violation>, second: Vec<Violation>, request_ids: Vec<String> },
}

impl GenerationError {
    pub fn request_ids(&self) -> &[String] {
        match self {
            GenerationError::Prompt(_) => &[],
            GenerationError::Gateway { request_ids, .. } | GenerationError::InvalidNoteAfterRepair { request_ids, .. } => {
                request_ids
            }
        }
    }
}

/// Extracts the first JSON object from a completion and validates it.
pub(crate) fn check_completion(text: &str, kind: NoteKind) -> Result<Value, Vec<Violation>> {
    let Some(doc) = extract_json_object(text) else {
        return Err(vec![Violation {
            path: String::new(),
            reason: ViolationReason::NotJson { detail: "no JSON object found in the response".into() },
        }]);
    };
    let result = validate_note(&doc, kind);
    if result.is_ok() {
        Ok(doc)
    } else {
        Err(result.violations)
    }
}

/// Renders `template` for `transcript` and runs [`complete_validated`].
pub fn complete_note(
    gateway: &Gateway,
    template: &PromptTemplate,
    transcript: &DiarizedTranscript,
) -> Result<NoteOutcome, GenerationError> {
    let prompt = render(template, transcript)?;
    complete_validated(gateway, PromptLibrary::builtin(), &prompt, template.kind)
}

/// Sends `prompt`, and if the reply is not a valid note sends one repair
/// prompt listing the violations. At most two backend calls.
pub fn complete_validated(
    gateway: &Gateway,
    lib: &PromptLibrary,
    prompt: &RenderedPrompt,
    kind: NoteKind,
) -> Result<NoteOutcome, GenerationError> {
    let mut request_ids = Vec::new();
    let mut prompt_hashes = Vec::new();
    let mut call = |p: &RenderedPrompt, ids: &mut Vec<String>| {
        let req = gateway.request(p.system_text.clone(), p.user_text.clone());
        ids.push(req.request_id.clone());
        prompt_hashes.push(p.content_hash.clone());
        gateway.complete(&req).map_err(|source| (source, ids.clone()))
    };
    let gw_err = |(source, request_ids): (GatewayError, Vec<String>)| GenerationError::Gateway { source, request_ids };

    let first = call(prompt, &mut request_ids).map_err(gw_err)?;
    let first_violations = match check_completion(&first.text, kind) {
        Ok(note) => {
            return Ok(NoteOutcome { note, kind, strategy: prompt.strategy, request_ids, prompt_hashes, repaired: false })
        }
        Err(v) => v,
    };
    let repair = render_note_repair(lib, prompt, kind, &first.text, &first_violations)?;
    let second = call(&repair, &mut request_ids).map_err(gw_err)?;
    match check_completion(&second.text, kind) {
        Ok(note) => Ok(NoteOutcome { note, kind, strategy: prompt.strategy, request_ids, prompt_hashes, repaired: true }),
        Err(second) => Err(GenerationError::InvalidNoteAfterRepair { first: first_violations, second, request_ids }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppedClock;
    use crate::gateway::{BackendConfig, MockFixture, MockScript};
    use crate::notes::{fixtures, ClinicalNote};
    use crate::transcript::parse_diarized;
    use std::sync::Arc;
    use std::time::Duration;

    fn gateway(fixtures: Vec<MockFixture>) -> Gateway {
        let clock = Arc::new(SteppedClock::new("2024-01-01T00:00:00Z".parse().unwrap(), Duration::from_millis(5)));
        Gateway::new(BackendConfig::mock(MockScript::ordered(fixtures)), clock).unwrap()
    }

    fn soap_json() -> String {
        ClinicalNote::Soap(fixtures::soap()).to_json().to_string()
    }

    fn transcript() -> DiarizedTranscript {
        parse_diarized("[0] How did you sleep? [1] Badly, again.", "t").unwrap()
    }

    fn structured() -> PromptTemplate {
        PromptTemplate::builtin(Strategy::Structured, NoteKind::Soap)
    }

    #[test]
    fn valid_first_reply_uses_one_call() {
        let gw = gateway(vec![MockFixture::text(&soap_json())]);
        let out = complete_note(&gw, &structured(), &transcript()).unwrap();
        assert_eq!(out.note, ClinicalNote::Soap(fixtures::soap()).to_json());
        assert_eq!(out.request_ids.len(), 1);
        assert!(!out.repaired);
        assert_eq!(gw.ledger().len(), 1);
    }

    #[test]
    fn prose_wrapped_reply_extracted() {
        let gw = gateway(vec![MockFixture::text(&format!("Here is the note: {} Let me know.", soap_json()))]);
        assert!(complete_note(&gw, &structured(), &transcript()).is_ok());
    }

    #[test]
    fn invalid_then_valid_repairs_once() {
        let gw = gateway(vec![MockFixture::text("{\"subjective\": {}}"), MockFixture::text(&soap_json())]);
        let out = complete_note(&gw, &structured(), &transcript()).unwrap();
        assert!(out.repaired);
        assert_eq!(out.request_ids.len(), 2);
        assert_ne!(out.prompt_hashes[0], out.prompt_hashes[1]);
        assert_eq!(gw.ledger().len(), 2);
    }

    #[test]
    fn invalid_twice_reports_both_lists() {
        let gw = gateway(vec![MockFixture::text("no json"), MockFixture::text("{\"plan\": 1}"), MockFixture::text(&soap_json())]);
        match complete_note(&gw, &structured(), &transcript()) {
            Err(GenerationError::InvalidNoteAfterRepair { first, second, request_ids }) => {
                assert!(matches!(first[0].reason, ViolationReason::NotJson { .. }));
                assert!(second.iter().any(|v| v.path == "/plan"));
                assert_eq!(request_ids.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.ledger().len(), 2);
    }

    #[test]
    fn backend_failure_propagates() {
        let gw = gateway(vec![]);
        assert!(matches!(complete_note(&gw, &structured(), &transcript()), Err(GenerationError::Gateway { .. })));
    }
}
