use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AttemptError, Backend, Completion, CompletionRequest, FinishReason, UnreachableReason, Usage};
use crate::text::tokenize;

/// One scripted reply. A bare string is a successful completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockFixture {
    Text(String),
    Detailed { text: String, finish_reason: FinishReason },
    /// A transient failure, subject to the retry policy.
    Fail { fail: String },
}

impl MockFixture {
    pub fn text(s: &str) -> Self {
        Self::Text(s.to_string())
    }

    pub fn fail(s: &str) -> Self {
        Self::Fail { fail: s.to_string() }
    }
}

/// Either consumed front to back, or looked up by prompt hash. Keyed
/// fixtures are lists so repeated prompts can get different replies; the
/// last entry is reused once the others are consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockScript {
    Ordered(Vec<MockFixture>),
    Keyed(BTreeMap<String, Vec<MockFixture>>),
}

impl Default for MockScript {
    fn default() -> Self {
        Self::Ordered(Vec::new())
    }
}

impl MockScript {
    pub fn ordered(fixtures: Vec<MockFixture>) -> Self {
        Self::Ordered(fixtures)
    }
}

enum State {
    Ordered(VecDeque<MockFixture>),
    Keyed(BTreeMap<String, VecDeque<MockFixture>>),
}

pub(crate) struct MockBackend {
    state: Mutex<State>,
}

impl MockBackend {
    pub(crate) fn new(script: MockScript) -> Self {
        let state = match script {
            MockScript::Ordered(f) => State::Ordered(f.into()),
            MockScript::Keyed(m) => State::Keyed(m.into_iter().map(|(k, v)| (k, v.into())).collect()),
        };
        Self { state: Mutex::new(state) }
    }

    fn next(&self, hash: &str) -> Result<MockFixture, UnreachableReason> {
        let mut state = self.state.lock().expect("mock lock");
        match &mut *state {
            State::Ordered(q) => q.pop_front().ok_or(UnreachableReason::ScriptExhausted),
            State::Keyed(m) => {
                let q = m.get_mut(hash).ok_or_else(|| UnreachableReason::NoFixture(hash.to_string()))?;
                match q.len() {
                    0 => Err(UnreachableReason::ScriptExhausted),
                    1 => Ok(q[0].clone()),
                    _ => Ok(q.pop_front().expect("non-empty")),
                }
            }
        }
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, AttemptError> {
        let fixture = self.next(&req.content_hash()).map_err(|reason| match reason {
            UnreachableReason::ScriptExhausted | UnreachableReason::NoFixture(_) => {
                AttemptError::Fatal(super::GatewayError::BackendUnreachable { reason, attempts: 1 })
            }
            reason => AttemptError::Transient { reason, retry_after: None, rate_limited: false },
        })?;
        let (text, finish_reason) = match fixture {
            MockFixture::Text(t) => (t, FinishReason::Stop),
            MockFixture::Detailed { text, finish_reason } => (text, finish_reason),
            MockFixture::Fail { fail } => {
                return Err(AttemptError::Transient {
                    reason: UnreachableReason::Scripted(fail),
                    retry_after: None,
                    rate_limited: false,
                })
            }
        };
        let usage = Usage {
            prompt_units: (tokenize(&req.system_text).len() + tokenize(&req.user_text).len()) as u64,
            completion_units: tokenize(&text).len() as u64,
        };
        Ok(Completion { text, finish_reason, usage, latency: Duration::ZERO })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompt_hash, BackendConfig, Gateway, GatewayError};
    use crate::clock::SystemClock;
    use std::sync::Arc;

    #[test]
    fn fixture_forms_deserialize() {
        let s: MockScript =
            serde_json::from_str(r#"{"ordered": ["a", {"text": "b", "finish_reason": "length"}, {"fail": "c"}]}"#)
                .unwrap();
        assert_eq!(
            s,
            MockScript::Ordered(vec![
                MockFixture::text("a"),
                MockFixture::Detailed { text: "b".into(), finish_reason: FinishReason::Length },
                MockFixture::fail("c"),
            ])
        );
    }

    #[test]
    fn keyed_lookup_by_prompt_hash() {
        let h = prompt_hash("s", "u");
        let script = MockScript::Keyed(BTreeMap::from([(h, vec![MockFixture::text("one"), MockFixture::text("two")])]));
        let gw = Gateway::new(BackendConfig::mock(script), Arc::new(SystemClock)).unwrap();
        let texts: Vec<_> = (0..3).map(|_| gw.complete(&gw.request("s", "u")).unwrap().text).collect();
        assert_eq!(texts, ["one", "two", "two"]);
        let err = gw.complete(&gw.request("s", "other")).unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnreachable { reason: UnreachableReason::NoFixture(_), .. }));
    }
}
