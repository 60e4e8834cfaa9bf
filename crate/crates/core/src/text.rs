//! Shared token normalization.

/// Lowercases and splits on whitespace, stripping leading and trailing
/// punctuation from every token. Tokens that end up empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let tok = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            (!tok.is_empty()).then_some(tok)
        })
        .collect()
}

/// Lowercase + whitespace split, punctuation kept.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Case-folded, whitespace-collapsed form used for answer string comparison.
pub fn normalize_answer(text: &str) -> String {
    whitespace_tokens(text).join(" ")
}
