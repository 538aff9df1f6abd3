use unicode_normalization::UnicodeNormalization;

/// Canonical form for query text: NFC, lowercase, single spaces, trimmed.
///
/// Every query key, prefix, and embedding lookup goes through this, so two
/// inputs that differ only in case or whitespace address the same record.
pub fn normalize(text: &str) -> String {
    let lowered: String = text.nfc().flat_map(char::to_lowercase).collect();
    // Lowercasing can produce sequences that are no longer composed.
    let composed: String = lowered.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for token in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Every rotation of the token sequence of an already-normalized query.
///
/// `"medicine for kids"` yields `"medicine for kids"`, `"for kids medicine"`
/// and `"kids medicine for"`. Repeated rotations (e.g. `"a a"`) are kept.
pub fn token_rotations(normalized: &str) -> Vec<String> {
    let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    (0..tokens.len())
        .map(|r| {
            let mut key = String::with_capacity(normalized.len());
            for (i, tok) in tokens[r..].iter().chain(&tokens[..r]).enumerate() {
                if i > 0 {
                    key.push(' ');
                }
                key.push_str(tok);
            }
            key
        })
        .collect()
}
