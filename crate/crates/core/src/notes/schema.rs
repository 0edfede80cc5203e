use serde_json::{json, Map, Value};

use super::NoteKind;

const DRAFT_07: &str = "http://json-schema.org/draft-07/schema#";

fn text(description: &str) -> Value {
    json!({ "type": "string", "description": description })
}

fn required_text(description: &str) -> Value {
    json!({ "type": "string", "minLength": 1, "description": description })
}

/// Object schema; every property is required except those named in `optional`.
fn object(description: &str, properties: Vec<(&str, Value)>, optional: &[&str]) -> Value {
    let required: Vec<Value> = properties
        .iter()
        .filter(|(name, _)| !optional.contains(name))
        .map(|(name, _)| Value::String((*name).to_string()))
        .collect();
    let props: Map<String, Value> = properties.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    json!({
        "type": "object",
        "description": description,
        "properties": props,
        "required": required,
        "additionalProperties": false,
    })
}

fn symptom_entry() -> Value {
    object(
        "One presenting symptom",
        vec![
            ("description", required_text("Symptom description")),
            ("onset", text("When and how the symptom began")),
            ("frequency", text("How often the symptom occurs")),
            ("ascendance", text("Whether the symptom is improving or worsening")),
            ("intensity", text("Severity of the symptom")),
            ("duration", text("How long the symptom has lasted")),
            ("quote", required_text("Client quote about the symptom, or \"not reported\"")),
        ],
        &[],
    )
}

fn symptoms() -> Value {
    json!({ "type": "array", "description": "Psychological factors, one entry per symptom", "items": symptom_entry() })
}

fn interventions() -> Value {
    object(
        "Interventions delivered in the session",
        vec![
            ("approach", text("Therapeutic approach or modality")),
            (
                "interventions",
                json!({ "type": "array", "description": "Psychological interventions", "items": { "type": "string" } }),
            ),
            ("rationale", text("Rationale for the interventions")),
        ],
        &[],
    )
}

fn progress_response(description: &str) -> Value {
    object(
        description,
        vec![
            ("responseToTreatment", text("Response to treatment")),
            ("examples", text("Specific examples or instances")),
            ("progressQuote", required_text("Client quote about progress, or \"not reported\"")),
            ("challenges", text("Challenges to progress")),
            ("therapistObservations", text("Therapist observations and reflections")),
            ("therapeuticAlliance", text("State of the therapeutic alliance")),
        ],
        &[],
    )
}

fn follow_up_plan() -> Value {
    object(
        "Follow-up actions and plans",
        vec![
            ("homework", text("Homework assigned to the client")),
            ("futureSession", text("Plan for the next session")),
            ("continuedTreatment", text("Plans for continued treatment")),
            ("coordinationOfCare", text("Coordination of care")),
        ],
        &[],
    )
}

fn document(kind: NoteKind, title: &str, sections: Vec<(&str, Value)>) -> Value {
    let mut doc = object(&format!("{kind} clinical note"), sections, &[]);
    let obj = doc.as_object_mut().expect("object schema");
    obj.insert("$schema".into(), Value::String(DRAFT_07.into()));
    obj.insert("title".into(), Value::String(title.into()));
    doc
}

/// Draft-07 JSON Schema for a note kind.
pub fn schema_for(kind: NoteKind) -> Value {
    match kind {
        NoteKind::Soap => document(
            kind,
            "SOAP note",
            vec![
                (
                    "subjective",
                    object(
                        "Patient's subjective complaints, symptoms, and medical history",
                        vec![
                            ("chiefComplaint", json!({ "type": "string", "minLength": 1 })),
                            ("chiefComplaintQuote", required_text("Client quote about the chief complaint")),
                            ("impairments", text("Impairments and challenges")),
                            ("impairmentsQuote", required_text("Client quote about impairments")),
                            ("symptoms", symptoms()),
                            ("medicalHistory", json!({ "type": "string" })),
                        ],
                        &["chiefComplaintQuote", "impairmentsQuote"],
                    ),
                ),
                (
                    "objective",
                    object(
                        "Clinician-observed findings",
                        vec![
                            (
                                "clinicalAssessment",
                                object(
                                    "Clinical assessment",
                                    vec![
                                        ("tool", text("Assessment tool")),
                                        ("results", text("Results")),
                                        ("status", text("Status")),
                                    ],
                                    &[],
                                ),
                            ),
                            ("riskAssessment", text("Risks or safety concerns")),
                            ("interventions", interventions()),
                        ],
                        &[],
                    ),
                ),
                ("assessment", progress_response("Progress and response to treatment")),
                ("plan", follow_up_plan()),
            ],
        ),
        NoteKind::Birp => document(
            kind,
            "BIRP note",
            vec![
                (
                    "behavior",
                    object(
                        "Presenting behavior, observations and interventions",
                        vec![
                            ("symptoms", symptoms()),
                            ("therapistObservations", text("Therapist observations and reflections")),
                            ("interventions", interventions()),
                        ],
                        &[],
                    ),
                ),
                ("response", progress_response("Client response to the interventions")),
                ("plan", follow_up_plan()),
            ],
        ),
    }
}

/// The schema document as written to disk.
pub fn schema_json(kind: NoteKind) -> String {
    let mut s = serde_json::to_string_pretty(&schema_for(kind)).expect("schema serializes");
    s.push('\n');
    s
}
