//! Raw and diarized transcripts.
//!
//! The diarized text format tags each speaker run with `[0]` (clinician) or
//! `[1]` (patient):
//!
//! ```text
//! [0] Hi, Eve. Good to see you again. [1] Hi.
//! ```
//!
//! Utterance text is whitespace-normalized (runs collapsed to one space,
//! ends trimmed) and adjacent runs by the same speaker are merged, so a
//! [`DiarizedTranscript`] always holds maximal speaker runs.

use std::fmt;
use std::io::BufRead;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::digest::sha256_hex;
use crate::text::normalize_whitespace;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("malformed speaker tag `[{tag}]` at byte {offset}: only [0] and [1] are allowed")]
    MalformedTag { tag: String, offset: usize },
    #[error("text precedes the first speaker tag")]
    LeadingTextBeforeTag,
    #[error("no speaker tags found")]
    NoSpeakerTags,
    #[error("utterance {position} is empty")]
    EmptyUtterance { position: usize },
    #[error("utterance {position} contains a speaker tag token")]
    EmbeddedTag { position: usize },
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error("no utterance records in input")]
    EmptyInput,
    #[error("read error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SpeakerLabel {
    Clinician = 0,
    Patient = 1,
}

impl SpeakerLabel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(SpeakerLabel::Clinician),
            1 => Some(SpeakerLabel::Patient),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            SpeakerLabel::Clinician => SpeakerLabel::Patient,
            SpeakerLabel::Patient => SpeakerLabel::Clinician,
        }
    }
}

impl From<SpeakerLabel> for u8 {
    fn from(label: SpeakerLabel) -> u8 {
        label.code()
    }
}

impl TryFrom<u8> for SpeakerLabel {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        SpeakerLabel::from_code(code as u64).ok_or_else(|| format!("speaker must be 0 or 1, got {code}"))
    }
}

impl fmt::Display for SpeakerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpeakerLabel::Clinician => f.write_str("clinician"),
            SpeakerLabel::Patient => f.write_str("patient"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Utterance {
    index: usize,
    speaker: SpeakerLabel,
    text: String,
}

impl Utterance {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn speaker(&self) -> SpeakerLabel {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTranscript {
    text: String,
    source_id: String,
}

impl RawTranscript {
    pub fn new(text: impl Into<String>, source_id: impl Into<String>) -> Result<Self, TranscriptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TranscriptError::EmptyTranscript);
        }
        Ok(Self { text, source_id: source_id.into() })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiarizedTranscript {
    utterances: Vec<Utterance>,
    source_id: String,
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("static regex"))
}

impl DiarizedTranscript {
    /// Builds a transcript from speaker runs, normalizing whitespace and
    /// merging adjacent runs by the same speaker.
    pub fn new<I, S>(source_id: impl Into<String>, runs: I) -> Result<Self, TranscriptError>
    where
        I: IntoIterator<Item = (SpeakerLabel, S)>,
        S: AsRef<str>,
    {
        let mut merged: Vec<(SpeakerLabel, String)> = Vec::new();
        for (position, (speaker, text)) in runs.into_iter().enumerate() {
            let text = normalize_whitespace(text.as_ref());
            if text.is_empty() {
                return Err(TranscriptError::EmptyUtterance { position });
            }
            if tag_regex().is_match(&text) {
                return Err(TranscriptError::EmbeddedTag { position });
            }
            match merged.last_mut() {
                Some((last, acc)) if *last == speaker => {
                    acc.push(' ');
                    acc.push_str(&text);
                }
                _ => merged.push((speaker, text)),
            }
        }
        if merged.is_empty() {
            return Err(TranscriptError::InvalidTranscript("no utterances".into()));
        }
        let utterances = merged
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Utterance { index, speaker, text })
            .collect();
        Ok(Self { utterances, source_id: source_id.into() })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Digest of the rendered form; identifies an encounter's transcript.
    pub fn content_hash(&self) -> String {
        sha256_hex(render_diarized(self).as_bytes())
    }
}

/// Splits a raw transcript into sentence-sized turn candidates.
///
/// A segment ends at `.`, `?` or `!` when the next character is whitespace.
/// Joining the segments with single spaces yields the whitespace-normalized
/// input.
pub fn segment_utterances(raw: &RawTranscript) -> Result<Vec<String>, TranscriptError> {
    segment_text(raw.text())
}

pub(crate) fn segment_text(text: &str) -> Result<Vec<String>, TranscriptError> {
    let normalized = normalize_whitespace(text);
    if normalized.is_empty() {
        return Err(TranscriptError::EmptyTranscript);
    }
    let mut segments = Vec::new();
    let mut start = 0;
    let mut chars = normalized.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            if let Some(&(next, ' ')) = chars.peek() {
                segments.push(normalized[start..next].to_string());
                start = next + 1;
            }
        }
    }
    if start < normalized.len() {
        segments.push(normalized[start..].to_string());
    }
    Ok(segments)
}

/// Parses the `[k] text` diarized format.
pub fn parse_diarized(text: &str, source_id: impl Into<String>) -> Result<DiarizedTranscript, TranscriptError> {
    if text.trim().is_empty() {
        return Err(TranscriptError::EmptyTranscript);
    }
    let mut runs: Vec<(SpeakerLabel, &str)> = Vec::new();
    let mut pending: Option<(SpeakerLabel, usize)> = None;
    for caps in tag_regex().captures_iter(text) {
        let whole = caps.get(0).expect("group 0");
        let digits = &caps[1];
        let label = digits
            .parse::<u64>()
            .ok()
            .and_then(SpeakerLabel::from_code)
            .ok_or_else(|| TranscriptError::MalformedTag { tag: digits.to_string(), offset: whole.start() })?;
        match pending {
            None => {
                if !text[..whole.start()].trim().is_empty() {
                    return Err(TranscriptError::LeadingTextBeforeTag);
                }
            }
            Some((speaker, from)) => runs.push((speaker, &text[from..whole.start()])),
        }
        pending = Some((label, whole.end()));
    }
    match pending {
        Some((speaker, from)) => runs.push((speaker, &text[from..])),
        None => return Err(TranscriptError::NoSpeakerTags),
    }
    DiarizedTranscript::new(source_id, runs)
}

/// Renders the `[k] text` diarized format, single-space separated.
pub fn render_diarized(transcript: &DiarizedTranscript) -> String {
    let mut out = String::new();
    for (i, u) in transcript.utterances.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push('[');
        out.push(char::from(b'0' + u.speaker.code()));
        out.push_str("] ");
        out.push_str(&u.text);
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    source_id: String,
}

/// Reads line-delimited JSON utterance records.
///
/// Each non-blank line is `{"speaker": 0|1, "text": "..."}`. The first
/// non-blank line may instead be a header `{"source_id": "..."}`.
pub fn ingest_records<R: BufRead>(reader: R) -> Result<DiarizedTranscript, TranscriptError> {
    let mut source_id = String::new();
    let mut runs: Vec<(SpeakerLabel, String)> = Vec::new();
    let mut seen_content = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TranscriptError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let violation = |reason: String| TranscriptError::SchemaViolation { line: line_no, reason };
        let value: Value = serde_json::from_str(&line).map_err(|e| violation(format!("invalid JSON: {e}")))?;
        let is_header = value.as_object().is_some_and(|o| o.contains_key("source_id"));
        if is_header {
            if seen_content {
                return Err(violation("header record must be the first record".into()));
            }
            let header: HeaderRecord =
                serde_json::from_value(value).map_err(|e| violation(format!("invalid header: {e}")))?;
            source_id = header.source_id;
            seen_content = true;
            continue;
        }
        seen_content = true;
        runs.push(parse_record(&value).map_err(violation)?);
    }
    if runs.is_empty() {
        return Err(TranscriptError::EmptyInput);
    }
    DiarizedTranscript::new(source_id, runs)
}

fn parse_record(value: &Value) -> Result<(SpeakerLabel, String), String> {
    let obj = value.as_object().ok_or("record must be a JSON object")?;
    if let Some(extra) = obj.keys().find(|k| *k != "speaker" && *k != "text") {
        return Err(format!("unexpected field `{extra}`"));
    }
    let speaker = obj
        .get("speaker")
        .ok_or("missing field `speaker`")?
        .as_u64()
        .and_then(SpeakerLabel::from_code)
        .ok_or("`speaker` must be 0 or 1")?;
    let text = obj.get("text").ok_or("missing field `text`")?.as_str().ok_or("`text` must be a string")?;
    if text.trim().is_empty() {
        return Err("`text` must be non-empty".into());
    }
    if tag_regex().is_match(text) {
        return Err("`text` must not contain speaker tags".into());
    }
    Ok((speaker, text.to_string()))
}

/// Writes a transcript in the line-delimited record format.
pub fn render_records(transcript: &DiarizedTranscript) -> String {
    let mut out = serde_json::json!({ "source_id": transcript.source_id }).to_string();
    out.push('\n');
    for u in &transcript.utterances {
        out.push_str(&serde_json::json!({ "speaker": u.speaker.code(), "text": u.text }).to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SpeakerLabel::{Clinician, Patient};

    fn raw(text: &str) -> RawTranscript {
        RawTranscript::new(text, "t").unwrap()
    }

    #[test]
    fn segments_on_terminators() {
        assert_eq!(segment_utterances(&raw("Hi. Sure.")).unwrap(), vec!["Hi.", "Sure."]);
        assert_eq!(
            segment_utterances(&raw("Hi, Eve. Good to see you again. Hi.")).unwrap(),
            vec!["Hi, Eve.", "Good to see you again.", "Hi."]
        );
        assert_eq!(segment_utterances(&raw("one two three")).unwrap(), vec!["one two three"]);
    }

    #[test]
    fn segment_keeps_inner_punctuation() {
        assert_eq!(
            segment_text("Really?! Yes...  ok  3.5 mg").unwrap(),
            vec!["Really?!", "Yes...", "ok 3.5 mg"]
        );
    }

    #[test]
    fn blank_raw_transcript_rejected() {
        assert_eq!(RawTranscript::new("  \n", "x"), Err(TranscriptError::EmptyTranscript));
        assert_eq!(segment_text(" "), Err(TranscriptError::EmptyTranscript));
    }

    #[test]
    fn parses_table_excerpt() {
        let t = parse_diarized("[0] Hi, Eve. Good to see you again. [1] Hi.", "s").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.utterances()[0].speaker(), Clinician);
        assert_eq!(t.utterances()[0].text(), "Hi, Eve. Good to see you again.");
        assert_eq!(t.utterances()[1].speaker(), Patient);
        assert_eq!(t.utterances()[1].text(), "Hi.");
        assert_eq!(t.utterances()[1].index(), 1);
        assert_eq!(render_diarized(&t), "[0] Hi, Eve. Good to see you again. [1] Hi.");
    }

    #[test]
    fn adjacent_same_speaker_runs_merge() {
        let t = parse_diarized("[1] a [1] b", "s").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.utterances()[0].speaker(), Patient);
        assert_eq!(t.utterances()[0].text(), "a b");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_diarized("[2] hello", "s"), Err(TranscriptError::MalformedTag { .. })));
        assert_eq!(parse_diarized("hello [0] hi", "s"), Err(TranscriptError::LeadingTextBeforeTag));
        assert_eq!(parse_diarized("hello", "s"), Err(TranscriptError::NoSpeakerTags));
        assert_eq!(parse_diarized("", "s"), Err(TranscriptError::EmptyTranscript));
        assert_eq!(parse_diarized("[0] [1] hi", "s"), Err(TranscriptError::EmptyUtterance { position: 0 }));
        assert!(matches!(
            parse_diarized("[0] a [99999999999999999999999] b", "s"),
            Err(TranscriptError::MalformedTag { .. })
        ));
    }

    #[test]
    fn renders_single_utterance() {
        let t = DiarizedTranscript::new("s", [(Patient, "Hi.")]).unwrap();
        assert_eq!(render_diarized(&t), "[1] Hi.");
    }

    #[test]
    fn empty_utterance_list_rejected() {
        let runs: Vec<(SpeakerLabel, &str)> = vec![];
        assert!(matches!(DiarizedTranscript::new("s", runs), Err(TranscriptError::InvalidTranscript(_))));
    }

    #[test]
    fn embedded_tag_rejected() {
        assert_eq!(
            DiarizedTranscript::new("s", [(Patient, "see [3] here")]),
            Err(TranscriptError::EmbeddedTag { position: 0 })
        );
    }

    #[test]
    fn ingest_two_records() {
        let input = "{\"source_id\": \"enc-1\"}\n{\"speaker\": 0, \"text\": \"Hello.\"}\n\n{\"speaker\": 1, \"text\": \"Hi.\"}\n";
        let t = ingest_records(input.as_bytes()).unwrap();
        assert_eq!(t.source_id(), "enc-1");
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn ingest_merges_and_reports_line() {
        let input = "{\"speaker\": 0, \"text\": \"a\"}\n{\"speaker\": 0, \"text\": \"b\"}\n{\"speaker\": 1, \"text\": \"c\"}\n";
        let t = ingest_records(input.as_bytes()).unwrap();
        let texts: Vec<&str> = t.utterances().iter().map(|u| u.text()).collect();
        assert_eq!(texts, vec!["a b", "c"]);

        let bad = "{\"speaker\": 0, \"text\": \"a\"}\n{\"speaker\": 3, \"text\": \"b\"}\n";
        assert!(matches!(
            ingest_records(bad.as_bytes()),
            Err(TranscriptError::SchemaViolation { line: 2, .. })
        ));
        let late_header = "{\"speaker\": 0, \"text\": \"a\"}\n{\"source_id\": \"x\"}\n";
        assert!(matches!(
            ingest_records(late_header.as_bytes()),
            Err(TranscriptError::SchemaViolation { line: 2, .. })
        ));
        assert_eq!(ingest_records("\n\n".as_bytes()), Err(TranscriptError::EmptyInput));
        assert_eq!(ingest_records("{\"source_id\": \"x\"}".as_bytes()), Err(TranscriptError::EmptyInput));
    }

    #[test]
    fn records_round_trip() {
        let t = parse_diarized("[0] Hello there. [1] Fine, \"thanks\".", "enc").unwrap();
        let back = ingest_records(render_records(&t).as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-zA-Z]{1,8}",
            "[a-z]{1,5}[.,?!]",
            Just("[x]".to_string()),
            Just("3.5".to_string()),
        ]
    }

    fn runs() -> impl Strategy<Value = Vec<(SpeakerLabel, String)>> {
        prop::collection::vec(
            (prop::bool::ANY, prop::collection::vec(word(), 1..6)),
            1..8,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(p, words)| (if p { Patient } else { Clinician }, words.join(" ")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(runs in runs()) {
            let t = DiarizedTranscript::new("src", runs).unwrap();
            let back = parse_diarized(&render_diarized(&t), "src").unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn merge_is_idempotent(runs in runs()) {
            let t = DiarizedTranscript::new("src", runs).unwrap();
            let again = DiarizedTranscript::new(
                "src",
                t.utterances().iter().map(|u| (u.speaker(), u.text().to_string())),
            ).unwrap();
            prop_assert_eq!(again, t);
        }

        #[test]
        fn text_tokens_conserved(runs in runs()) {
            let mut expected: Vec<String> = runs
                .iter()
                .flat_map(|(_, t)| t.split_whitespace().map(str::to_string))
                .collect();
            let t = DiarizedTranscript::new("src", runs).unwrap();
            let rendered = render_diarized(&t);
            let mut actual: Vec<String> = rendered
                .split_whitespace()
                .filter(|w| *w != "[0]" && *w != "[1]")
                .map(str::to_string)
                .collect();
            expected.sort();
            actual.sort();
            prop_assert_eq!(actual, expected);
        }

        #[test]
        fn segments_never_empty_and_rejoin(words in prop::collection::vec(word(), 1..30), gaps in prop::collection::vec("[ \t\n]{1,3}", 30)) {
            let mut text = String::new();
            for (w, g) in words.iter().zip(gaps.iter()) {
                text.push_str(w);
                text.push_str(g);
            }
            let segs = segment_text(&text).unwrap();
            prop_assert!(segs.iter().all(|s| !s.is_empty()));
            prop_assert_eq!(segs.join(" "), normalize_whitespace(&text));
        }
    }
}
