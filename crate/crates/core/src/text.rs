//! Whitespace tokenization and normalization shared by every component.
//!
//! Tokens are whitespace-delimited runs after NFC normalization. They stand in
//! for the subword units of a transformer tokenizer: budgets and term
//! statistics are counted in these units.

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// NFC-normalizes `text`.
pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

/// NFC-normalizes and lowercases `text` for case-insensitive matching.
pub fn fold(text: &str) -> String {
    normalize(text).to_lowercase()
}

/// Splits NFC-normalized `text` on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Tokenizes raw bytes, rejecting invalid UTF-8.
pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::invalid(format!("invalid UTF-8 at byte {}", e.valid_up_to())))?;
    Ok(tokenize(text))
}

/// Case-folded tokens, the unit of indexing for lexical retrieval.
pub fn folded_tokens(text: &str) -> Vec<String> {
    tokenize(&fold(text))
}
