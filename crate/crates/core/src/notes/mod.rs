//! SOAP and BIRP note model.
//!
//! Notes travel as JSON documents that validate against [`schema_for`]. The
//! typed structs mirror that schema one-to-one, so a document that passes
//! [`validate_note`] deserializes without loss.

mod pii;
mod render;
mod schema;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use pii::{scan_pii, PiiCategory, PiiFinding};
pub use render::render_note_text;
pub use schema::{schema_for, schema_json};
pub use validate::{validate_against, validate_note, validate_note_str, ValidationResult, Violation, ViolationReason};

/// Placeholder for free-text fields the encounter did not cover.
pub const NOT_REPORTED: &str = "not reported";

#[derive(Debug, thiserror::Error)]
pub enum NoteError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("note does not match the {kind} schema: {violations:?}")]
    Invalid { kind: NoteKind, violations: Vec<Violation> },
    #[error("unknown note kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoteKind {
    #[serde(rename = "SOAP")]
    Soap,
    #[serde(rename = "BIRP")]
    Birp,
}

impl NoteKind {
    pub const ALL: [NoteKind; 2] = [NoteKind::Soap, NoteKind::Birp];

    pub fn as_str(self) -> &'static str {
        match self {
            NoteKind::Soap => "SOAP",
            NoteKind::Birp => "BIRP",
        }
    }

    pub fn sections(self) -> &'static [&'static str] {
        match self {
            NoteKind::Soap => &["subjective", "objective", "assessment", "plan"],
            NoteKind::Birp => &["behavior", "response", "plan"],
        }
    }

    /// Expanded section names, e.g. "Subjective, Objective, Assessment, and Plan".
    pub fn section_phrase(self) -> &'static str {
        match self {
            NoteKind::Soap => "Subjective, Objective, Assessment, and Plan",
            NoteKind::Birp => "Behavior, Intervention, Response, and Plan",
        }
    }

    /// Picks the kind whose schema the document satisfies, preferring an
    /// exact match and falling back to top-level section names.
    pub fn detect(doc: &Value) -> Option<NoteKind> {
        if let Some(kind) = NoteKind::ALL.into_iter().find(|k| validate_note(doc, *k).is_ok()) {
            return Some(kind);
        }
        let obj = doc.as_object()?;
        NoteKind::ALL
            .into_iter()
            .find(|k| k.sections().iter().all(|s| obj.contains_key(*s)))
    }
}

impl fmt::Display for NoteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoteKind {
    type Err = NoteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "soap" => Ok(NoteKind::Soap),
            "birp" => Ok(NoteKind::Birp),
            _ => Err(NoteError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SymptomEntry {
    pub description: String,
    pub onset: String,
    pub frequency: String,
    /// Kept under its printed name; records whether the symptom is improving.
    pub ascendance: String,
    pub intensity: String,
    pub duration: String,
    pub quote: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Interventions {
    pub approach: String,
    pub interventions: Vec<String>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ClinicalAssessment {
    pub tool: String,
    pub results: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Subjective {
    pub chief_complaint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chief_complaint_quote: Option<String>,
    pub impairments: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impairments_quote: Option<String>,
    pub symptoms: Vec<SymptomEntry>,
    pub medical_history: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Objective {
    pub clinical_assessment: ClinicalAssessment,
    pub risk_assessment: String,
    pub interventions: Interventions,
}

/// Progress and response block, shared by SOAP Assessment and BIRP Response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProgressResponse {
    pub response_to_treatment: String,
    pub examples: String,
    pub progress_quote: String,
    pub challenges: String,
    pub therapist_observations: String,
    pub therapeutic_alliance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FollowUpPlan {
    pub homework: String,
    pub future_session: String,
    pub continued_treatment: String,
    pub coordination_of_care: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SoapNote {
    pub subjective: Subjective,
    pub objective: Objective,
    pub assessment: ProgressResponse,
    pub plan: FollowUpPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Behavior {
    pub symptoms: Vec<SymptomEntry>,
    pub therapist_observations: String,
    /// Interventions sit under Behavior, as in the printed BIRP layout.
    pub interventions: Interventions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BirpNote {
    pub behavior: Behavior,
    pub response: ProgressResponse,
    pub plan: FollowUpPlan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClinicalNote {
    Soap(SoapNote),
    Birp(BirpNote),
}

impl ClinicalNote {
    pub fn kind(&self) -> NoteKind {
        match self {
            ClinicalNote::Soap(_) => NoteKind::Soap,
            ClinicalNote::Birp(_) => NoteKind::Birp,
        }
    }

    /// Validates `doc` against the schema for `kind`, then deserializes it.
    pub fn from_json(doc: &Value, kind: NoteKind) -> Result<Self, NoteError> {
        let result = validate_note(doc, kind);
        if !result.is_ok() {
            return Err(NoteError::Invalid { kind, violations: result.violations });
        }
        let parsed = match kind {
            NoteKind::Soap => serde_json::from_value(doc.clone()).map(ClinicalNote::Soap),
            NoteKind::Birp => serde_json::from_value(doc.clone()).map(ClinicalNote::Birp),
        };
        parsed.map_err(|e| NoteError::MalformedJson(e.to_string()))
    }

    pub fn to_json(&self) -> Value {
        match self {
            ClinicalNote::Soap(n) => serde_json::to_value(n),
            ClinicalNote::Birp(n) => serde_json::to_value(n),
        }
        .expect("note structs always serialize")
    }
}

/// Pretty JSON with sorted keys, as written to note files.
pub fn note_file_bytes(doc: &Value) -> String {
    let canonical: Value = serde_json::from_str(&crate::digest::canonical_json(doc)).expect("canonical JSON parses");
    let mut s = serde_json::to_string_pretty(&canonical).expect("value serializes");
    s.push('\n');
    s
}
