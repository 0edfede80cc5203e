//! Run configuration file:
//!
//! ```json
//! {
//!   "backend": {"kind": "http", "base_url": "https://host/v1", "api_key_env": "NOTES_API_KEY", "model_id": "m"},
//!   "clock": {"kind": "stepped", "start": "2024-01-01T00:00:00Z", "step_ms": 1000},
//!   "seed": 0
//! }
//! ```
//!
//! `clock` defaults to the system clock. The API key itself never appears in
//! the file, only the name of the variable holding it.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::{read_text, Failure, EXIT_CONFIG};
use crate::clock::{Clock, SteppedClock, SystemClock, Timestamp};
use crate::gateway::{BackendConfig, Gateway};

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClockConfig {
    #[default]
    System,
    Stepped { start: Timestamp, step_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Clock handle that keeps the concrete stepped clock reachable.
#[derive(Clone)]
pub(crate) enum ClockHandle {
    System(Arc<SystemClock>),
    Stepped(Arc<SteppedClock>, Duration),
}

impl ClockHandle {
    pub(crate) fn shared(&self) -> Arc<dyn Clock> {
        match self {
            ClockHandle::System(c) => c.clone(),
            ClockHandle::Stepped(c, _) => c.clone(),
        }
    }

    pub(crate) fn now(&self) -> Timestamp {
        self.shared().now()
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.backend.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub(crate) fn load(path: &Path) -> Result<Self, Failure> {
        Self::parse(&read_text(path)?).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
    }

    pub(crate) fn clock(&self) -> ClockHandle {
        match &self.clock {
            ClockConfig::System => ClockHandle::System(Arc::new(SystemClock)),
            ClockConfig::Stepped { start, step_ms } => {
                let step = Duration::from_millis(*step_ms);
                ClockHandle::Stepped(Arc::new(SteppedClock::new(*start, step)), step)
            }
        }
    }

    /// A stepped clock restarts at its configured start on every run; move it
    /// past the last stored timestamp so repeated runs keep time increasing.
    pub(crate) fn resume_after(&self, clock: &ClockHandle, last: Timestamp) {
        if let ClockHandle::Stepped(c, step) = clock {
            c.advance_to(last.plus((*step).max(Duration::from_millis(1))));
        }
    }

    pub(crate) fn gateway(&self, clock: Arc<dyn Clock>) -> Result<Gateway, Failure> {
        Gateway::new(self.backend.clone(), clock).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_stepped() {
        let cfg = RunConfig::parse(r#"{"backend": {"kind": "mock", "script": {"ordered": []}}}"#).unwrap();
        assert_eq!(cfg.clock, ClockConfig::System);
        let cfg = RunConfig::parse(
            r#"{"backend": {"kind": "mock", "script": {"ordered": []}},
                "clock": {"kind": "stepped", "start": "2024-01-01T00:00:00Z", "step_ms": 1000}, "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        let c = cfg.clock();
        assert_eq!(c.now().to_string(), "2024-01-01T00:00:00.000Z");
        cfg.resume_after(&c, "2024-06-01T00:00:00Z".parse().unwrap());
        assert_eq!(c.now().to_string(), "2024-06-01T00:00:01.000Z");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::parse(r#"{"backend": {"kind": "http", "base_url": "", "api_key_env": "K"}}"#).is_err());
        assert!(RunConfig::parse(r#"{"backend": {"kind": "mock", "script": {"ordered": []}}, "api_key": "x"}"#).is_err());
    }
}
