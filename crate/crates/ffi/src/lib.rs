//! C ABI over the `clinote` library.
//!
//! Conventions:
//!
//! * Every function returns a [`ClinoteStatus`]; results go through out-pointers.
//! * On failure a message is stored per thread and can be fetched with
//!   [`clinote_last_error`].
//! * Strings handed out by the library are NUL-terminated UTF-8 and must be
//!   released with [`clinote_string_free`]. Handles have their own `_free`.
//! * Panics never cross the boundary; they surface as `CLINOTE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use clinote::classify::{classify_transcript, SpeakerPredictor};
use clinote::clock::SystemClock;
use clinote::evaluate::{accuracy, precision_recall_f1, rouge1_f1};
use clinote::notes::{render_note_text, scan_pii, schema_json, validate_note_str, ClinicalNote};
use clinote::refine::ChainStatus;
use clinote::transcript::{parse_diarized, render_diarized, RawTranscript};
use clinote::{ClassifierModel, ConfusionMatrix, DiarizedTranscript, NoteKind, NoteStore};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClinoteStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    ModelError = 5,
    ValidationFailed = 6,
    Io = 7,
    BrokenChain = 8,
    OutOfRange = 9,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClinoteNoteKind {
    Soap = 0,
    Birp = 1,
}

impl From<ClinoteNoteKind> for NoteKind {
    fn from(k: ClinoteNoteKind) -> Self {
        match k {
            ClinoteNoteKind::Soap => NoteKind::Soap,
            ClinoteNoteKind::Birp => NoteKind::Birp,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClinoteRouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClinoteMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Opaque diarized transcript.
pub struct ClinoteTranscript(DiarizedTranscript);

/// Opaque speaker classifier.
pub struct ClinoteModel(ClassifierModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(ClinoteStatus, String);

impl Fail {
    fn new(status: ClinoteStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> ClinoteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ClinoteStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClinoteStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(ClinoteStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(ClinoteStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(ClinoteStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(ClinoteStatus::NullArgument, format!("{name} is null")))
}

fn to_c(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail::new(ClinoteStatus::InvalidArgument, "string contains NUL"))
}

/// Copy of the calling thread's last error message, or null if the last call succeeded.
#[no_mangle]
pub extern "C" fn clinote_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clinote_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn clinote_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- transcripts -------------------------------------------------------

/// Parses `[0] ... [1] ...` text.
///
/// # Safety
/// `text` and `source_id` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_transcript_parse(
    text: *const c_char,
    source_id: *const c_char,
    out: *mut *mut ClinoteTranscript,
) -> ClinoteStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = parse_diarized(str_arg(text, "text")?, str_arg(source_id, "source_id")?)
            .map_err(|e| Fail::new(ClinoteStatus::ParseError, e))?;
        *out = Box::into_raw(Box::new(ClinoteTranscript(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clinote_transcript_free(t: *mut ClinoteTranscript) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_transcript_len(t: *const ClinoteTranscript, out: *mut usize) -> ClinoteStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(t, "transcript")?.0.len();
        Ok(())
    })
}

/// Speaker code (0 clinician, 1 patient) and text of utterance `index`.
/// `out_text` may be null when only the speaker is wanted.
///
/// # Safety
/// `t` must be a live handle; out-pointers writable or null as documented.
#[no_mangle]
pub unsafe extern "C" fn clinote_transcript_utterance(
    t: *const ClinoteTranscript,
    index: usize,
    out_speaker: *mut u8,
    out_text: *mut *mut c_char,
) -> ClinoteStatus {
    guard(|| {
        let t = ref_arg(t, "transcript")?;
        let speaker = out_arg(out_speaker, "out_speaker")?;
        let u = t
            .0
            .utterances()
            .get(index)
            .ok_or_else(|| Fail::new(ClinoteStatus::OutOfRange, format!("index {index} out of range")))?;
        if let Some(out_text) = out_text.as_mut() {
            *out_text = to_c(u.text().to_string())?;
        }
        *speaker = u.speaker().code();
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_transcript_render(t: *const ClinoteTranscript, out: *mut *mut c_char) -> ClinoteStatus {
    guard(|| {
        let t = ref_arg(t, "transcript")?;
        *out_arg(out, "out")? = to_c(render_diarized(&t.0))?;
        Ok(())
    })
}

// ---- classifier --------------------------------------------------------

/// Loads a model from the JSON written by `clinote train`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_model_from_json(json: *const c_char, out: *mut *mut ClinoteModel) -> ClinoteStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = ClassifierModel::from_json(str_arg(json, "json")?).map_err(|e| Fail::new(ClinoteStatus::ModelError, e))?;
        *out = Box::into_raw(Box::new(ClinoteModel(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clinote_model_free(m: *mut ClinoteModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Labels one utterance. `out_probs` (may be null) receives
/// `[p_clinician, p_patient]`.
///
/// # Safety
/// `m` live; `text` NUL-terminated; `out_probs` null or room for two doubles.
#[no_mangle]
pub unsafe extern "C" fn clinote_model_predict(
    m: *const ClinoteModel,
    text: *const c_char,
    out_speaker: *mut u8,
    out_probs: *mut f64,
) -> ClinoteStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let text = str_arg(text, "text")?;
        let speaker = out_arg(out_speaker, "out_speaker")?;
        let (label, p) = m.0.predict(text);
        *speaker = label.code();
        if !out_probs.is_null() {
            let [c, pt] = p.values();
            *out_probs = c;
            *out_probs.add(1) = pt;
        }
        Ok(())
    })
}

/// Segments undiarized text and labels each segment.
///
/// # Safety
/// `m` live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_model_classify(
    m: *const ClinoteModel,
    text: *const c_char,
    source_id: *const c_char,
    out: *mut *mut ClinoteTranscript,
) -> ClinoteStatus {
    guard(|| {
        let m = ref_arg(m, "model")?;
        let out = out_arg(out, "out")?;
        let raw = RawTranscript::new(str_arg(text, "text")?, str_arg(source_id, "source_id")?)
            .map_err(|e| Fail::new(ClinoteStatus::ParseError, e))?;
        let t = classify_transcript(&m.0, &raw).map_err(|e| Fail::new(ClinoteStatus::ModelError, e))?;
        *out = Box::into_raw(Box::new(ClinoteTranscript(t)));
        Ok(())
    })
}

// ---- metrics -----------------------------------------------------------

/// # Safety
/// Strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_rouge1(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut ClinoteRouge,
) -> ClinoteStatus {
    guard(|| {
        let r = rouge1_f1(str_arg(candidate, "candidate")?, str_arg(reference, "reference")?);
        *out_arg(out, "out")? = ClinoteRouge { precision: r.precision, recall: r.recall, f1: r.f1 };
        Ok(())
    })
}

/// Metrics from a 2x2 confusion matrix with the patient as positive class.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_confusion_metrics(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    out: *mut ClinoteMetrics,
) -> ClinoteStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cm = ConfusionMatrix::new(tp, fp, tn, fn_).map_err(|e| Fail::new(ClinoteStatus::InvalidArgument, e))?;
        let (precision, recall, f1) = precision_recall_f1(&cm);
        *out = ClinoteMetrics { accuracy: accuracy(&cm), precision, recall, f1 };
        Ok(())
    })
}

// ---- notes -------------------------------------------------------------

/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_schema(kind: ClinoteNoteKind, out: *mut *mut c_char) -> ClinoteStatus {
    guard(|| {
        *out_arg(out, "out")? = to_c(schema_json(kind.into()))?;
        Ok(())
    })
}

/// Validates a note. Returns `Ok` when it conforms and `ValidationFailed`
/// otherwise; in both cases `out_violations` (may be null) receives a JSON
/// array of `{path, reason, ...}` objects.
///
/// # Safety
/// `json` NUL-terminated; `out_violations` null or writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_validate_note(
    json: *const c_char,
    kind: ClinoteNoteKind,
    out_violations: *mut *mut c_char,
) -> ClinoteStatus {
    guard(|| {
        let result = validate_note_str(str_arg(json, "json")?, kind.into())
            .map_err(|e| Fail::new(ClinoteStatus::ParseError, e))?;
        if let Some(out) = out_violations.as_mut() {
            let text = serde_json::to_string(&result.violations).map_err(|e| Fail::new(ClinoteStatus::InvalidArgument, e))?;
            *out = to_c(text)?;
        }
        if result.is_ok() {
            Ok(())
        } else {
            let lines: Vec<String> = result.violations.iter().map(ToString::to_string).collect();
            Err(Fail::new(ClinoteStatus::ValidationFailed, lines.join("; ")))
        }
    })
}

/// Renders a valid note as sectioned plain text.
///
/// # Safety
/// `json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_render_note(
    json: *const c_char,
    kind: ClinoteNoteKind,
    out: *mut *mut c_char,
) -> ClinoteStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let doc: serde_json::Value =
            serde_json::from_str(str_arg(json, "json")?).map_err(|e| Fail::new(ClinoteStatus::ParseError, e))?;
        let note = ClinicalNote::from_json(&doc, kind.into()).map_err(|e| Fail::new(ClinoteStatus::ValidationFailed, e))?;
        *out = to_c(render_note_text(&note))?;
        Ok(())
    })
}

/// Scans free text for identifiers. `out_count` gets the number of findings;
/// `out_findings` (may be null) a JSON array of `{category, span, excerpt}`.
///
/// # Safety
/// `text` NUL-terminated; `out_count` writable; `out_findings` null or writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_scan_pii(
    text: *const c_char,
    out_count: *mut usize,
    out_findings: *mut *mut c_char,
) -> ClinoteStatus {
    guard(|| {
        let findings = scan_pii(str_arg(text, "text")?);
        let count = out_arg(out_count, "out_count")?;
        if let Some(out) = out_findings.as_mut() {
            let text = serde_json::to_string(&findings).map_err(|e| Fail::new(ClinoteStatus::InvalidArgument, e))?;
            *out = to_c(text)?;
        }
        *count = findings.len();
        Ok(())
    })
}

// ---- store -------------------------------------------------------------

/// Verifies a patient's hash chain. On success `out_versions` holds the chain
/// length; a broken chain returns `BrokenChain` with the failing version
/// (0 for the header) in `out_broken_at`.
///
/// # Safety
/// Strings NUL-terminated; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn clinote_store_verify(
    store_dir: *const c_char,
    patient_id: *const c_char,
    out_versions: *mut u64,
    out_broken_at: *mut u64,
) -> ClinoteStatus {
    guard(|| {
        let dir = str_arg(store_dir, "store_dir")?;
        let patient = str_arg(patient_id, "patient_id")?;
        let versions = out_arg(out_versions, "out_versions")?;
        let broken_at = out_arg(out_broken_at, "out_broken_at")?;
        let store =
            NoteStore::open(Path::new(dir), Arc::new(SystemClock)).map_err(|e| Fail::new(ClinoteStatus::Io, e))?;
        match store.verify_chain(patient).map_err(|e| Fail::new(ClinoteStatus::Io, e))? {
            ChainStatus::Ok { versions: n } => {
                *versions = n;
                Ok(())
            }
            ChainStatus::Broken(b) => {
                *broken_at = b.version_no;
                Err(Fail::new(ClinoteStatus::BrokenChain, b))
            }
        }
    })
}
