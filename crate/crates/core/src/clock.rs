//! Time source abstraction. Retry backoff, rate limiting, ledger entries and
//! note versions all read time through a [`Clock`], so tests and
//! reproducible batch runs can substitute a [`SteppedClock`].

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// UTC instant with millisecond precision, rendered as
/// `YYYY-MM-DDTHH:MM:SS.mmmZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Self(dt.trunc_subsecs(3))
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn plus(&self, d: Duration) -> Self {
        Self::from_datetime(self.0 + chrono::Duration::from_std(d).expect("duration in range"))
    }

    /// Zero when `earlier` is not before `self`.
    pub fn since(&self, earlier: &Timestamp) -> Duration {
        (self.0 - earlier.0).to_std().unwrap_or(Duration::ZERO)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%S%.3fZ"))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self::from_datetime(DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc)))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_datetime(Utc::now())
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Deterministic clock: every `now()` returns the current instant and then
/// advances it by `step`; `sleep` advances it without blocking and is
/// recorded.
#[derive(Debug)]
pub struct SteppedClock {
    state: Mutex<SteppedState>,
    step: Duration,
}

#[derive(Debug)]
struct SteppedState {
    current: Timestamp,
    sleeps: Vec<Duration>,
}

impl SteppedClock {
    pub fn new(start: Timestamp, step: Duration) -> Self {
        Self { state: Mutex::new(SteppedState { current: start, sleeps: Vec::new() }), step }
    }

    pub fn advance(&self, d: Duration) {
        let mut st = self.state.lock().expect("clock lock");
        st.current = st.current.plus(d);
    }

    /// Moves the clock forward to `t` if it is behind.
    pub fn advance_to(&self, t: Timestamp) {
        let mut st = self.state.lock().expect("clock lock");
        if st.current < t {
            st.current = t;
        }
    }

    pub fn peek(&self) -> Timestamp {
        self.state.lock().expect("clock lock").current
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().expect("clock lock").sleeps.clone()
    }
}

impl Clock for SteppedClock {
    fn now(&self) -> Timestamp {
        let mut st = self.state.lock().expect("clock lock");
        let t = st.current;
        st.current = t.plus(self.step);
        t
    }

    fn sleep(&self, d: Duration) {
        let mut st = self.state.lock().expect("clock lock");
        st.current = st.current.plus(d);
        st.sleeps.push(d);
    }
}
