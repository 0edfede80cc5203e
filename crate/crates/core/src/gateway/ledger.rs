use std::io::{self, BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::FinishReason;
use crate::clock::{Clock, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CallOutcome {
    Ok { finish_reason: FinishReason },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub request_id: String,
    pub content_hash: String,
    pub backend: String,
    pub model_id: String,
    pub timestamp: Timestamp,
    pub attempts: u32,
    pub outcome: CallOutcome,
}

/// Append-only record of backend calls.
#[derive(Debug, Default)]
pub struct CallLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl CallLedger {
    /// Appends one entry. The timestamp is read while the ledger is locked so
    /// entries are ordered by time.
    pub fn record(&self, clock: &dyn Clock, build: impl FnOnce(Timestamp) -> LedgerEntry) {
        let mut entries = self.entries.lock().expect("ledger lock");
        let entry = build(clock.now());
        entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_entries(&self.entries(), &mut w)
    }
}

pub(crate) fn write_entries<W: Write>(entries: &[LedgerEntry], w: &mut W) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a ledger written by [`CallLedger::write_jsonl`].
pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Vec<LedgerEntry>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
