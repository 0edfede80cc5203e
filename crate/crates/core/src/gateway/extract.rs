//! Locating JSON inside model output that may be wrapped in prose or code
//! fences.

use serde_json::Value;

/// End (exclusive, byte offset) of the balanced region opening at `start`.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_region(s: &str, open: u8) -> Option<&str> {
    let start = s.bytes().position(|b| b == open)?;
    let end = balanced_end(s, start)?;
    Some(&s[start..end])
}

/// Parses the first balanced top-level `{...}` region.
pub fn extract_json_object(text: &str) -> Option<Value> {
    first_region(text, b'{').and_then(|r| serde_json::from_str(r).ok()).filter(Value::is_object)
}

/// Parses the first balanced top-level `[...]` region.
pub fn extract_json_array(text: &str) -> Option<Value> {
    first_region(text, b'[').and_then(|r| serde_json::from_str(r).ok()).filter(Value::is_array)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn prose_wrapped() {
        let v = extract_json_object("Here is the note: {\"a\": {\"b\": [1, 2]}} Hope this helps {\"c\": 1}").unwrap();
        assert_eq!(v, json!({"a": {"b": [1, 2]}}));
    }

    #[test]
    fn braces_in_strings() {
        let v = extract_json_object(r#"```json
{"quote": "she said \"}{\" twice", "x": "]"}
```"#)
        .unwrap();
        assert_eq!(v["x"], "]");
    }

    #[test]
    fn none_when_absent_or_unbalanced() {
        assert_eq!(extract_json_object("no json here"), None);
        assert_eq!(extract_json_object("{\"a\": 1"), None);
        assert_eq!(extract_json_array("x [1, {\"k\": [2]}] y"), Some(json!([1, {"k": [2]}])));
    }

    proptest! {
        #[test]
        fn embedded_object_recovered(prefix in "[a-zA-Z .:]{0,40}", suffix in "[a-zA-Z .:]{0,40}", k in "[a-z]{1,8}", v in ".{0,20}") {
            let doc = json!({ k: v, "nested": {"list": [1, "}"]} });
            let text = format!("{prefix}{}{suffix}", serde_json::to_string_pretty(&doc).unwrap());
            prop_assert_eq!(extract_json_object(&text), Some(doc));
        }
    }
}
