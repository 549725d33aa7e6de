/// Lowercases and splits on every non-alphanumeric character, so whitespace
/// and punctuation are both boundaries and punctuation never survives.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// First `min(len, limit)` tokens.
pub fn truncate(tokens: &[String], limit: usize) -> Vec<String> {
    tokens[..tokens.len().min(limit)].to_vec()
}

/// Number of sentences in raw text: runs ending in `.`, `!` or `?` that
/// contain at least one alphanumeric character. Never less than 1.
pub fn count_sentences(text: &str) -> usize {
    let n = text
        .split(['.', '!', '?'])
        .filter(|seg| seg.chars().any(char::is_alphanumeric))
        .count();
    n.max(1)
}
