//! Rule-based scan for personal identifiers in generated text.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiCategory {
    Phone,
    Email,
    DateOfBirth,
    NationalId,
    FullNameCandidate,
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PiiCategory::Phone => "phone",
            PiiCategory::Email => "email",
            PiiCategory::DateOfBirth => "date_of_birth",
            PiiCategory::NationalId => "national_id",
            PiiCategory::FullNameCandidate => "full_name_candidate",
        })
    }
}

/// A match; `span` is a half-open range of character (not byte) offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PiiFinding {
    pub category: PiiCategory,
    pub span: (usize, usize),
    pub excerpt: String,
}

struct Rule {
    category: PiiCategory,
    regex: Regex,
    /// Capture group holding the identifier itself.
    group: usize,
    /// Reject matches directly preceded or followed by a digit.
    digit_bounded: bool,
}

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let rule = |category, pattern: &str, group, digit_bounded| Rule {
            category,
            regex: Regex::new(pattern).expect("static regex"),
            group,
            digit_bounded,
        };
        vec![
            rule(PiiCategory::Email, r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}", 0, false),
            rule(PiiCategory::NationalId, r"\d{3}-\d{2}-\d{4}|\d{9}", 0, true),
            rule(PiiCategory::DateOfBirth, r"\d{4}-\d{2}-\d{2}|\d{1,2}/\d{1,2}/(?:\d{4}|\d{2})", 0, true),
            rule(
                PiiCategory::Phone,
                r"(?:\+?1[\s.-]?)?(?:\(\d{3}\)\s?|\d{3}[\s.-]?)\d{3}[\s.-]?\d{4}",
                0,
                true,
            ),
            rule(PiiCategory::FullNameCandidate, r"(?i:\bname\s+is)\s+(\p{Lu}\p{Ll}+\s+\p{Lu}\p{Ll}+)", 1, false),
        ]
    })
}

fn digit_at(text: &str, byte: usize, before: bool) -> bool {
    if before {
        text[..byte].chars().next_back()
    } else {
        text[byte..].chars().next()
    }
    .is_some_and(|c| c.is_ascii_digit())
}

/// Finds phone numbers, emails, dates, 9-digit ids and names introduced by
/// "name is". Overlapping matches keep the earliest-listed rule.
pub fn scan_pii(text: &str) -> Vec<PiiFinding> {
    let mut byte_spans: Vec<(usize, usize, PiiCategory)> = Vec::new();
    for rule in rules() {
        for caps in rule.regex.captures_iter(text) {
            let Some(m) = caps.get(rule.group) else { continue };
            if rule.digit_bounded && (digit_at(text, m.start(), true) || digit_at(text, m.end(), false)) {
                continue;
            }
            let overlaps = byte_spans.iter().any(|(s, e, _)| m.start() < *e && *s < m.end());
            if !overlaps {
                byte_spans.push((m.start(), m.end(), rule.category));
            }
        }
    }
    byte_spans.sort();
    byte_spans
        .into_iter()
        .map(|(start, end, category)| {
            let char_start = text[..start].chars().count();
            let excerpt = text[start..end].to_string();
            let char_end = char_start + excerpt.chars().count();
            PiiFinding { category, span: (char_start, char_end), excerpt }
        })
        .collect()
}
