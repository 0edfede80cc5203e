use crate::gateway::{Gateway, GatewayError};
use crate::prompts::{render_classification, render_transcript_repair, PromptError, PromptLibrary};
use crate::transcript::{parse_diarized, DiarizedTranscript, RawTranscript, TranscriptError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmClassifyError {
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("completion is not a tagged transcript after one repair: {first}; then {second}")]
    UnparseableCompletion { first: TranscriptError, second: TranscriptError },
}

/// Asks the backend to insert `[0]`/`[1]` tags and parses the reply. A reply
/// that does not parse gets one repair call carrying the parser error.
pub fn classify_with_llm(gateway: &Gateway, raw: &RawTranscript) -> Result<DiarizedTranscript, LlmClassifyError> {
    let lib = PromptLibrary::builtin();
    let prompt = render_classification(lib, raw)?;
    let req = gateway.request(prompt.system_text.clone(), prompt.user_text.clone());
    let reply = gateway.complete(&req)?;
    let first = match parse_diarized(reply.text.trim(), raw.source_id()) {
        Ok(t) => return Ok(t),
        Err(e) => e,
    };
    let repair = render_transcript_repair(lib, &prompt, &reply.text, &first.to_string())?;
    let req = gateway.request(repair.system_text, repair.user_text);
    let reply = gateway.complete(&req)?;
    parse_diarized(reply.text.trim(), raw.source_id()).map_err(|second| LlmClassifyError::UnparseableCompletion { first, second })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;
    use crate::gateway::{BackendConfig, MockFixture, MockScript};
    use crate::transcript::render_diarized;
    use std::sync::Arc;

    fn gw(fixtures: &[&str]) -> Gateway {
        let script = MockScript::ordered(fixtures.iter().map(|f| MockFixture::text(f)).collect());
        Gateway::new(BackendConfig::mock(script), Arc::new(SystemClock)).unwrap()
    }

    fn raw() -> RawTranscript {
        RawTranscript::new("Hi, how are you? Fine thanks.", "s").unwrap()
    }

    #[test]
    fn tagged_reply_parses() {
        let g = gw(&["[0] Hi, how are you? [1] Fine thanks."]);
        let t = classify_with_llm(&g, &raw()).unwrap();
        assert_eq!(render_diarized(&t), "[0] Hi, how are you? [1] Fine thanks.");
        assert_eq!(t.source_id(), "s");
        let entries = g.ledger().entries();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn malformed_twice_is_unparseable() {
        let g = gw(&["[2] hi", "[2] hi"]);
        match classify_with_llm(&g, &raw()) {
            Err(LlmClassifyError::UnparseableCompletion { first, second }) => {
                assert!(matches!(first, TranscriptError::MalformedTag { .. }));
                assert_eq!(first, second);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.ledger().len(), 2);
    }

    #[test]
    fn malformed_then_valid_uses_two_calls() {
        let g = gw(&["Sure! Hi, how are you?", "[0] Hi, how are you? [1] Fine thanks."]);
        assert_eq!(classify_with_llm(&g, &raw()).unwrap().len(), 2);
        assert_eq!(g.ledger().len(), 2);
    }

    #[test]
    fn repair_prompt_carries_parser_error() {
        let lib = PromptLibrary::builtin();
        let p = render_classification(lib, &raw()).unwrap();
        assert!(p.user_text.starts_with("Transcript:\nHi, how are you? Fine thanks."));
        let e = parse_diarized("[2] hi", "s").unwrap_err();
        let r = render_transcript_repair(lib, &p, "[2] hi", &e.to_string()).unwrap();
        assert!(r.user_text.ends_with(&e.to_string()));
    }
}
