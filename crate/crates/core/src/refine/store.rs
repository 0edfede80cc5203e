//! Append-only, hash-chained note history. One directory holds, per
//! patient, `<patient>.jsonl` (a header line, then one [`NoteVersion`] per
//! line) and `<patient>.encounters.jsonl` (the encounter data each refined
//! version was derived from).

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EncounterData, RefineError};
use crate::clock::{Clock, Timestamp};
use crate::digest::{canonical_json, sha256_fields, DIGEST_ALGORITHM, ZERO_DIGEST};
use crate::notes::{validate_note, NoteKind};
use crate::prompts::Strategy;
use crate::transcript::render_diarized;

pub const STORE_FORMAT: &str = "clinote-note-store";
pub const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    Initial,
    Conditional,
    ExtractIntegrate,
}

impl fmt::Display for RefineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefineMode::Initial => "initial",
            RefineMode::Conditional => "conditional",
            RefineMode::ExtractIntegrate => "extract_integrate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub mode: RefineMode,
    pub strategy: Option<Strategy>,
    pub request_ids: Vec<String>,
    pub prompt_hashes: Vec<String>,
    pub source_transcript_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteVersion {
    pub patient_id: String,
    pub version_no: u64,
    pub kind: NoteKind,
    pub created_at: Timestamp,
    pub parent_hash: String,
    pub self_hash: String,
    pub provenance: Provenance,
    pub note: Value,
}

impl NoteVersion {
    /// Digest over every field except `self_hash`.
    pub fn compute_hash(&self) -> String {
        let provenance = serde_json::to_value(&self.provenance).expect("provenance serializes");
        sha256_fields([
            self.patient_id.as_bytes(),
            self.version_no.to_string().as_bytes(),
            self.kind.as_str().as_bytes(),
            canonical_json(&self.note).as_bytes(),
            self.created_at.to_string().as_bytes(),
            self.parent_hash.as_bytes(),
            canonical_json(&provenance).as_bytes(),
        ])
    }

    fn to_line(&self) -> String {
        serde_json::to_string(self).expect("version serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreHeader {
    pub format: String,
    pub schema_version: u32,
    pub digest: String,
    pub patient_id: String,
}

impl StoreHeader {
    fn new(patient_id: &str) -> Self {
        Self {
            format: STORE_FORMAT.into(),
            schema_version: STORE_SCHEMA_VERSION,
            digest: DIGEST_ALGORITHM.into(),
            patient_id: patient_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncounterRecord {
    pub transcript_hash: String,
    pub received_at: Timestamp,
    pub transcript: String,
    pub documents: Vec<String>,
}

/// Where and why a chain stopped verifying. Version 0 denotes the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainBreak {
    pub version_no: u64,
    pub reason: String,
}

impl fmt::Display for ChainBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.version_no == 0 {
            write!(f, "broken at store header: {}", self.reason)
        } else {
            write!(f, "broken at version {}: {}", self.version_no, self.reason)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Ok { versions: u64 },
    Broken(ChainBreak),
}

pub struct NoteStore {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
    write_lock: Mutex<()>,
}

impl fmt::Debug for NoteStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoteStore").field("dir", &self.dir).finish()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RefineError + '_ {
    move |e| RefineError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn check_patient_id(id: &str) -> Result<(), RefineError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(RefineError::InvalidPatientId(id.to_string()))
    }
}

/// Parses one stored chain. Stops at the first broken link.
fn scan_chain(patient_id: &str, bytes: &[u8]) -> (Vec<NoteVersion>, Option<ChainBreak>) {
    let mut versions: Vec<NoteVersion> = Vec::new();
    let mut lines = bytes.split(|&b| b == b'\n');
    let brk = |version_no: u64, reason: &str| Some(ChainBreak { version_no, reason: reason.to_string() });

    let header = match lines.next() {
        None | Some([]) => return (versions, None),
        Some(h) => h,
    };
    let header_ok = std::str::from_utf8(header)
        .ok()
        .and_then(|s| serde_json::from_str::<StoreHeader>(s).ok().filter(|h| serde_json::to_string(h).ok().as_deref() == Some(s)));
    match header_ok {
        Some(h) if h == StoreHeader::new(patient_id) => {}
        Some(h) if h.digest != DIGEST_ALGORITHM => return (versions, brk(0, &format!("unsupported digest `{}`", h.digest))),
        _ => return (versions, brk(0, "unreadable or mismatched header")),
    }

    let mut rest: Vec<&[u8]> = lines.collect();
    // A trailing newline leaves one empty final element.
    if rest.last() == Some(&&[][..]) {
        rest.pop();
    }
    for (i, line) in rest.into_iter().enumerate() {
        let expected = i as u64 + 1;
        let Ok(text) = std::str::from_utf8(line) else {
            return (versions, brk(expected, "record is not UTF-8"));
        };
        let v: NoteVersion = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(_) => return (versions, brk(expected, "record is not a valid version")),
        };
        if v.to_line() != text {
            return (versions, brk(expected, "record is not in canonical form"));
        }
        if v.version_no != expected {
            return (versions, brk(expected, &format!("found version number {}", v.version_no)));
        }
        if v.patient_id != patient_id {
            return (versions, brk(expected, "record belongs to another patient"));
        }
        let parent = versions.last().map_or(ZERO_DIGEST, |p| p.self_hash.as_str());
        if v.parent_hash != parent {
            return (versions, brk(expected, "parent hash does not match the previous version"));
        }
        if v.compute_hash() != v.self_hash {
            return (versions, brk(expected, "self hash does not match the record"));
        }
        if let Some(prev) = versions.last() {
            if v.created_at <= prev.created_at {
                return (versions, brk(expected, "timestamp does not increase"));
            }
        }
        versions.push(v);
    }
    (versions, None)
}

impl NoteStore {
    pub fn open(dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, RefineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir, clock, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn chain_path(&self, patient_id: &str) -> PathBuf {
        self.dir.join(format!("{patient_id}.jsonl"))
    }

    pub fn encounters_path(&self, patient_id: &str) -> PathBuf {
        self.dir.join(format!("{patient_id}.encounters.jsonl"))
    }

    fn read_bytes(&self, patient_id: &str) -> Result<Vec<u8>, RefineError> {
        check_patient_id(patient_id)?;
        let path = self.chain_path(patient_id);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Versions in ascending order; empty for an unknown patient.
    pub fn history(&self, patient_id: &str) -> Result<Vec<NoteVersion>, RefineError> {
        let bytes = self.read_bytes(patient_id)?;
        match scan_chain(patient_id, &bytes) {
            (versions, None) => Ok(versions),
            (_, Some(b)) => Err(RefineError::BrokenChain(b)),
        }
    }

    pub fn latest(&self, patient_id: &str) -> Result<Option<NoteVersion>, RefineError> {
        Ok(self.history(patient_id)?.pop())
    }

    pub fn verify_chain(&self, patient_id: &str) -> Result<ChainStatus, RefineError> {
        let bytes = self.read_bytes(patient_id)?;
        Ok(match scan_chain(patient_id, &bytes) {
            (versions, None) => ChainStatus::Ok { versions: versions.len() as u64 },
            (_, Some(b)) => ChainStatus::Broken(b),
        })
    }

    pub fn encounters(&self, patient_id: &str) -> Result<Vec<EncounterRecord>, RefineError> {
        check_patient_id(patient_id)?;
        let path = self.encounters_path(patient_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .map(|l| serde_json::from_str(l).map_err(|e| RefineError::Io(format!("{}: {e}", path.display()))))
            .collect()
    }

    pub fn commit_version(
        &self,
        patient_id: &str,
        note: &Value,
        kind: NoteKind,
        provenance: Provenance,
    ) -> Result<NoteVersion, RefineError> {
        self.commit(patient_id, note, kind, provenance, None)
    }

    /// Validates, chains and appends a version. The encounter, when given, is
    /// appended to the encounter log first.
    pub(crate) fn commit(
        &self,
        patient_id: &str,
        note: &Value,
        kind: NoteKind,
        provenance: Provenance,
        encounter: Option<&EncounterData>,
    ) -> Result<NoteVersion, RefineError> {
        let _guard = self.write_lock.lock().expect("store lock");
        let result = validate_note(note, kind);
        if !result.is_ok() {
            return Err(RefineError::ValidationFailed(result.violations));
        }
        let history = self.history(patient_id)?;
        if let Some(last) = history.last() {
            if last.kind != kind {
                return Err(RefineError::KindMismatch { stored: last.kind, given: kind });
            }
        }
        if provenance.mode != RefineMode::Initial && history.is_empty() {
            return Err(RefineError::UnknownPatient(patient_id.to_string()));
        }
        if let (Some(enc), Some(h)) = (encounter, &provenance.source_transcript_hash) {
            if &enc.transcript.content_hash() != h {
                return Err(RefineError::SummaryMismatch);
            }
        }
        let created_at = self.clock.now();
        if let Some(last) = history.last() {
            if created_at <= last.created_at {
                return Err(RefineError::ClockSkew { last: last.created_at, now: created_at });
            }
        }
        let mut version = NoteVersion {
            patient_id: patient_id.to_string(),
            version_no: history.len() as u64 + 1,
            kind,
            created_at,
            parent_hash: history.last().map_or(ZERO_DIGEST.to_string(), |v| v.self_hash.clone()),
            self_hash: String::new(),
            provenance,
            note: note.clone(),
        };
        version.self_hash = version.compute_hash();

        if let Some(enc) = encounter {
            let record = EncounterRecord {
                transcript_hash: enc.transcript.content_hash(),
                received_at: enc.received_at,
                transcript: render_diarized(&enc.transcript),
                documents: enc.documents.clone(),
            };
            let path = self.encounters_path(patient_id);
            append_line(&path, &serde_json::to_string(&record).expect("encounter serializes"))?;
        }
        let path = self.chain_path(patient_id);
        if history.is_empty() && !path.exists() {
            let header = serde_json::to_string(&StoreHeader::new(patient_id)).expect("header serializes");
            append_line(&path, &format!("{header}\n{}", version.to_line()))?;
        } else {
            append_line(&path, &version.to_line())?;
        }
        Ok(version)
    }
}

fn append_line(path: &Path, line: &str) -> Result<(), RefineError> {
    let mut f: File = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(format!("{line}\n").as_bytes()).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}
