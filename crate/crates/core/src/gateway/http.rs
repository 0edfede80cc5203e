use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, Backend, Completion, CompletionRequest, FinishReason, GatewayError, UnreachableReason, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after: Option<String>,
    pub body: String,
}

/// Minimal POST-JSON transport, replaceable in tests.
pub trait HttpTransport: Send + Sync {
    /// `Err` means no HTTP response was obtained at all.
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value, timeout: Duration) -> Result<HttpResponse, String> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let result = agent
            .post(url)
            .set("Authorization", &format!("Bearer {bearer}"))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string());
        let resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(t.to_string()),
        };
        let status = resp.status();
        let retry_after = resp.header("Retry-After").map(str::to_string);
        let body = resp.into_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, retry_after, body })
    }
}

pub(crate) struct HttpBackend {
    url: String,
    api_key_env: String,
    timeout: Duration,
    transport: Arc<dyn HttpTransport>,
}

impl HttpBackend {
    pub(crate) fn new(base_url: String, api_key_env: String, timeout: Duration, transport: Arc<dyn HttpTransport>) -> Self {
        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        Self { url, api_key_env, timeout, transport }
    }
}

pub(crate) fn request_body(req: &CompletionRequest) -> Value {
    json!({
        "model": req.model_id,
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": req.user_text},
        ],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

fn parse_retry_after(v: Option<&str>) -> Option<Duration> {
    let secs: f64 = v?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

pub(crate) fn parse_completion(body: &str) -> Result<Completion, GatewayError> {
    let bad = |m: &str| GatewayError::InvalidResponse(m.to_string());
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
    let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(|| bad("response has no choices"))?;
    let text = choice.pointer("/message/content").and_then(Value::as_str);
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    let text = match (text, finish_reason) {
        (Some(t), _) => t.to_string(),
        (None, FinishReason::Stop) => return Err(bad("first choice has no message content")),
        (None, _) => String::new(),
    };
    let units = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text,
        finish_reason,
        usage: Usage { prompt_units: units("prompt_tokens"), completion_units: units("completion_tokens") },
        latency: Duration::ZERO,
    })
}

impl Backend for HttpBackend {
    fn send(&self, req: &CompletionRequest) -> Result<Completion, AttemptError> {
        let key = std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| AttemptError::Fatal(GatewayError::AuthMissing(self.api_key_env.clone())))?;
        let resp = self
            .transport
            .post_json(&self.url, &key, &request_body(req), self.timeout)
            .map_err(|e| AttemptError::Transient { reason: UnreachableReason::Transport(e), retry_after: None, rate_limited: false })?;
        match resp.status {
            200..=299 => parse_completion(&resp.body).map_err(AttemptError::Fatal),
            429 => Err(AttemptError::Transient {
                reason: UnreachableReason::Status(429),
                retry_after: parse_retry_after(resp.retry_after.as_deref()),
                rate_limited: true,
            }),
            408 | 500..=599 => Err(AttemptError::Transient {
                reason: UnreachableReason::Status(resp.status),
                retry_after: None,
                rate_limited: false,
            }),
            status => {
                let message: String = resp.body.chars().take(200).collect();
                Err(AttemptError::Fatal(GatewayError::Rejected { status, message }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppedClock;
    use crate::gateway::{BackendConfig, CallOutcome, Gateway};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, String>>>,
        seen: Mutex<Vec<(String, String, Value)>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpResponse, String>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) })
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, url: &str, bearer: &str, body: &Value, _: Duration) -> Result<HttpResponse, String> {
            self.seen.lock().unwrap().push((url.into(), bearer.into(), body.clone()));
            self.replies.lock().unwrap().pop().unwrap_or(Err("no reply".into()))
        }
    }

    fn ok(text: &str) -> Result<HttpResponse, String> {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
                          "usage": {"prompt_tokens": 7, "completion_tokens": 2}});
        Ok(HttpResponse { status: 200, retry_after: None, body: body.to_string() })
    }

    fn status(code: u16, retry_after: Option<&str>) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: code, retry_after: retry_after.map(str::to_string), body: "{}".into() })
    }

    fn gateway(env: &str, transport: Arc<Scripted>) -> (Gateway, Arc<SteppedClock>) {
        let clock = Arc::new(SteppedClock::new("2024-01-01T00:00:00Z".parse().unwrap(), Duration::from_millis(1)));
        let cfg = BackendConfig::http("http://example.invalid/v1/", env, "some-model");
        (Gateway::with_transport(cfg, clock.clone(), transport).unwrap(), clock)
    }

    #[test]
    fn wire_format_and_auth() {
        std::env::set_var("CLINOTE_TEST_KEY_A", "sekrit");
        let t = Scripted::new(vec![ok("hello")]);
        let (gw, _) = gateway("CLINOTE_TEST_KEY_A", t.clone());
        let c = gw.complete(&gw.request("sys", "usr")).unwrap();
        assert_eq!(c.text, "hello");
        assert_eq!(c.usage, Usage { prompt_units: 7, completion_units: 2 });
        let seen = t.seen.lock().unwrap();
        let (url, bearer, body) = &seen[0];
        assert_eq!(url, "http://example.invalid/v1/chat/completions");
        assert_eq!(bearer, "sekrit");
        assert_eq!(
            body,
            &json!({"model": "some-model", "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}],
                    "temperature": 0.0, "max_tokens": 4096})
        );
    }

    #[test]
    fn missing_key_is_auth_missing() {
        std::env::remove_var("CLINOTE_TEST_KEY_UNSET");
        let t = Scripted::new(vec![ok("x")]);
        let (gw, _) = gateway("CLINOTE_TEST_KEY_UNSET", t.clone());
        let err = gw.complete(&gw.request("s", "u")).unwrap_err();
        assert_eq!(err, GatewayError::AuthMissing("CLINOTE_TEST_KEY_UNSET".into()));
        assert!(t.seen.lock().unwrap().is_empty());
        assert_eq!(gw.ledger().len(), 1);
    }

    #[test]
    fn rate_limit_then_success_retries_once() {
        std::env::set_var("CLINOTE_TEST_KEY_B", "k");
        let t = Scripted::new(vec![status(429, Some("2")), ok("fine")]);
        let (gw, clock) = gateway("CLINOTE_TEST_KEY_B", t);
        assert_eq!(gw.complete(&gw.request("s", "u")).unwrap().text, "fine");
        assert_eq!(clock.sleeps(), vec![Duration::from_secs(2)]);
        let entry = &gw.ledger().entries()[0];
        assert_eq!(entry.attempts, 2);
        assert!(matches!(entry.outcome, CallOutcome::Ok { .. }));
    }

    #[test]
    fn persistent_rate_limit_surfaces_retry_after() {
        std::env::set_var("CLINOTE_TEST_KEY_C", "k");
        let t = Scripted::new(vec![status(429, Some("1")), status(429, Some("1")), status(429, Some("3"))]);
        let (gw, _) = gateway("CLINOTE_TEST_KEY_C", t);
        assert_eq!(
            gw.complete(&gw.request("s", "u")).unwrap_err(),
            GatewayError::RateLimited { retry_after: Some(Duration::from_secs(3)) }
        );
    }

    #[test]
    fn server_errors_retry_client_errors_do_not() {
        std::env::set_var("CLINOTE_TEST_KEY_D", "k");
        let t = Scripted::new(vec![status(503, None), Err("reset".into()), ok("x")]);
        let (gw, clock) = gateway("CLINOTE_TEST_KEY_D", t);
        assert_eq!(gw.complete(&gw.request("s", "u")).unwrap().text, "x");
        assert_eq!(clock.sleeps(), vec![Duration::from_millis(500), Duration::from_millis(1000)]);

        let t = Scripted::new(vec![status(400, None), ok("x")]);
        let (gw, _) = gateway("CLINOTE_TEST_KEY_D", t);
        assert!(matches!(gw.complete(&gw.request("s", "u")), Err(GatewayError::Rejected { status: 400, .. })));
        assert_eq!(gw.ledger().entries()[0].attempts, 1);
    }

    #[test]
    fn completion_parsing() {
        assert!(parse_completion("not json").is_err());
        assert!(parse_completion(r#"{"choices": []}"#).is_err());
        let c = parse_completion(r#"{"choices": [{"message": {"content": "abc"}, "finish_reason": "length"}]}"#).unwrap();
        assert_eq!((c.text.as_str(), c.finish_reason), ("abc", FinishReason::Length));
        assert_eq!(parse_retry_after(Some("1.5")), Some(Duration::from_millis(1500)));
        assert_eq!(parse_retry_after(Some("Wed, 21 Oct 2015 07:28:00 GMT")), None);
    }
}
