/// Lowercased alphanumeric word tokens. Every non-alphanumeric character is a
/// separator; there is no stemming and no stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("Hi, Eve! I'm OK."), vec!["hi", "eve", "i", "m", "ok"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("... --- !!!").is_empty());
    }

    #[test]
    fn whitespace_collapse() {
        assert_eq!(normalize_whitespace("  a \n\t b  c "), "a b c");
    }
}
