//! Validation for the JSON Schema subset the note schemas use: `type`,
//! `properties`, `required`, `additionalProperties: false`, `items`,
//! `minLength` and `enum`. Annotation keywords are ignored.

use std::fmt;

use serde::Serialize;
use serde_json::Value;

use super::{schema_for, NoteError, NoteKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum ViolationReason {
    RequiredMissing,
    Type { expected: String, found: String },
    AdditionalProperty,
    MinLength { min: u64 },
    NotInEnum,
    /// The document could not be located or parsed at all.
    NotJson { detail: String },
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationReason::RequiredMissing => f.write_str("required-missing"),
            ViolationReason::Type { expected, found } => write!(f, "type: expected {expected}, found {found}"),
            ViolationReason::AdditionalProperty => f.write_str("additional-property"),
            ViolationReason::MinLength { min } => write!(f, "min-length: shorter than {min}"),
            ViolationReason::NotInEnum => f.write_str("enum: value not allowed"),
            ViolationReason::NotJson { detail } => write!(f, "not-json: {detail}"),
        }
    }
}

/// One schema violation, located by a JSON Pointer into the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    #[serde(flatten)]
    pub reason: ViolationReason,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_note(doc: &Value, kind: NoteKind) -> ValidationResult {
    validate_against(doc, &schema_for(kind))
}

pub fn validate_note_str(doc: &str, kind: NoteKind) -> Result<ValidationResult, NoteError> {
    let value: Value = serde_json::from_str(doc).map_err(|e| NoteError::MalformedJson(e.to_string()))?;
    Ok(validate_note(&value, kind))
}

pub fn validate_against(doc: &Value, schema: &Value) -> ValidationResult {
    let mut violations = Vec::new();
    check(doc, schema, &mut String::new(), &mut violations);
    ValidationResult { violations }
}

fn escape_token(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn type_matches(v: &Value, expected: &str) -> bool {
    match expected {
        "number" => v.is_number(),
        "integer" => v.as_f64().is_some_and(|f| f.fract() == 0.0),
        other => type_name(v) == other,
    }
}

fn check(doc: &Value, schema: &Value, path: &mut String, out: &mut Vec<Violation>) {
    let Some(schema) = schema.as_object() else { return };

    if let Some(expected) = schema.get("type") {
        let allowed: Vec<&str> = match expected {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        if !allowed.is_empty() && !allowed.iter().any(|t| type_matches(doc, t)) {
            out.push(Violation {
                path: path.clone(),
                reason: ViolationReason::Type { expected: allowed.join("|"), found: type_name(doc).into() },
            });
            return;
        }
    }

    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(doc) {
            out.push(Violation { path: path.clone(), reason: ViolationReason::NotInEnum });
        }
    }

    if let (Some(min), Value::String(s)) = (schema.get("minLength").and_then(Value::as_u64), doc) {
        if (s.chars().count() as u64) < min {
            out.push(Violation { path: path.clone(), reason: ViolationReason::MinLength { min } });
        }
    }

    if let Value::Object(obj) = doc {
        let properties = schema.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(required)) = schema.get("required") {
            for name in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(name) {
                    out.push(Violation {
                        path: format!("{path}/{}", escape_token(name)),
                        reason: ViolationReason::RequiredMissing,
                    });
                }
            }
        }
        let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
        let mut keys: Vec<&String> = obj.keys().collect();
        keys.sort();
        for key in keys {
            let len = path.len();
            path.push('/');
            path.push_str(&escape_token(key));
            match properties.and_then(|p| p.get(key)) {
                Some(sub) => check(&obj[key], sub, path, out),
                None if closed => out.push(Violation { path: path.clone(), reason: ViolationReason::AdditionalProperty }),
                None => {}
            }
            path.truncate(len);
        }
    }

    if let (Value::Array(items), Some(item_schema)) = (doc, schema.get("items")) {
        for (i, item) in items.iter().enumerate() {
            let len = path.len();
            path.push('/');
            path.push_str(&i.to_string());
            check(item, item_schema, path, out);
            path.truncate(len);
        }
    }
}
