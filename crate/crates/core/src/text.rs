//! Persian input handling: the half-space (U+200C, zero-width non-joiner)
//! codec and the text-to-text task prefix.
//!
//! Whitespace tokenizers cannot see a zero-width non-joiner, so before
//! tokenization every half-space is rewritten as a standalone marker token
//! (`"[unused0]"` for the warm-started model, `"<hfs>"` in text-to-text
//! mode). Decoding reverses the substitution exactly.

use std::fmt;

use thiserror::Error;

/// The Persian half-space character.
pub const HALF_SPACE: char = '\u{200C}';

/// Marker surface used by the warm-started encoder-decoder.
pub const DEFAULT_MARKER: &str = "[unused0]";

/// Marker surface used in text-to-text mode.
pub const TEXT_TO_TEXT_MARKER: &str = "<hfs>";

/// Flag prepended to inputs in text-to-text mode.
pub const TASK_PREFIX: &str = "summarize: ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("half-space marker must be non-empty")]
    EmptyMarker,
    #[error("half-space marker {0:?} must not contain whitespace")]
    WhitespaceInMarker(String),
    #[error("input already contains the half-space marker {marker:?} at byte {offset}")]
    MarkerInInput { marker: String, offset: usize },
}

/// Text whose half-spaces have been replaced by a marker token.
///
/// `content` never contains U+200C.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedText {
    content: String,
    marker: String,
}

impl NormalizedText {
    /// Wraps already-encoded text, e.g. the output of a tokenizer decode.
    /// Any raw half-space left in `content` is dropped.
    pub fn from_encoded(content: impl Into<String>, marker: impl Into<String>) -> Self {
        let mut content = content.into();
        content.retain(|c| c != HALF_SPACE);
        Self { content, marker: marker.into() }
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Number of marker tokens in the content.
    pub fn marker_count(&self) -> usize {
        self.content.split_whitespace().filter(|tok| *tok == self.marker).count()
    }

    pub fn into_content(self) -> String {
        self.content
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.content)
    }
}

/// Characters removed during encoding: control characters other than
/// newline and tab, plus the zero-width space and byte-order mark.
pub fn is_unwanted(c: char) -> bool {
    (c.is_control() && c != '\n' && c != '\t') || c == '\u{200B}' || c == '\u{FEFF}'
}

fn validate_marker(marker: &str) -> Result<(), TextError> {
    if marker.is_empty() {
        return Err(TextError::EmptyMarker);
    }
    if marker.chars().any(char::is_whitespace) {
        return Err(TextError::WhitespaceInMarker(marker.to_string()));
    }
    Ok(())
}

/// Replaces every half-space with ` marker ` and strips unwanted characters.
pub fn encode_special_tokens(text: &str, marker: &str) -> Result<NormalizedText, TextError> {
    validate_marker(marker)?;
    let cleaned: String = text.chars().filter(|&c| !is_unwanted(c)).collect();
    // Checked after stripping: removing a zero-width char could splice a marker together.
    if let Some(offset) = cleaned.find(marker) {
        return Err(TextError::MarkerInInput { marker: marker.to_string(), offset });
    }

    let mut content = String::with_capacity(cleaned.len() + 8);
    for c in cleaned.chars() {
        if c == HALF_SPACE {
            content.push(' ');
            content.push_str(marker);
            content.push(' ');
        } else {
            content.push(c);
        }
    }
    Ok(NormalizedText { content, marker: marker.to_string() })
}

/// Inverse of [`encode_special_tokens`].
pub fn decode_special_tokens(text: &NormalizedText) -> String {
    decode_marker(&text.content, &text.marker)
}

/// Replaces each whitespace-delimited occurrence of `marker`, together with at
/// most one adjacent ASCII space on each side, by U+200C.
///
/// Consuming exactly one delimiter per side keeps this an exact inverse of the
/// encoder while also accepting markers at the start or end of a line.
pub fn decode_marker(text: &str, marker: &str) -> String {
    if marker.is_empty() || !text.contains(marker) {
        return text.to_string();
    }
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(marker) {
        let start = search_from + rel;
        let end = start + marker.len();
        let left_ok = start == 0 || is_ascii_ws(bytes[start - 1]);
        let right_ok = end == text.len() || is_ascii_ws(bytes[end]);
        if !(left_ok && right_ok) {
            search_from = start + marker.chars().next().map_or(1, char::len_utf8);
            continue;
        }
        let lead = if start > cursor && bytes[start - 1] == b' ' { start - 1 } else { start };
        let trail = if end < text.len() && bytes[end] == b' ' { end + 1 } else { end };
        out.push_str(&text[cursor..lead]);
        out.push(HALF_SPACE);
        cursor = trail;
        search_from = trail;
    }
    out.push_str(&text[cursor..]);
    out
}

fn is_ascii_ws(b: u8) -> bool {
    b.is_ascii_whitespace()
}

/// Decodes both known marker surfaces.
pub fn decode_all_markers(text: &str) -> String {
    let once = decode_marker(text, DEFAULT_MARKER);
    decode_marker(&once, TEXT_TO_TEXT_MARKER)
}

pub fn apply_task_prefix(text: &str) -> String {
    let mut out = String::with_capacity(TASK_PREFIX.len() + text.len());
    out.push_str(TASK_PREFIX);
    out.push_str(text);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn substitute_oracle(text: &str, marker: &str) -> String {
        let mut s = String::new();
        for c in text.chars() {
            if c == HALF_SPACE {
                s += &format!(" {marker} ");
            } else {
                s.push(c);
            }
        }
        s
    }

    #[test]
    fn plural_noun_splits_into_three_tokens() {
        let enc = encode_special_tokens("فرآورده\u{200C}های", DEFAULT_MARKER).unwrap();
        assert_eq!(enc.content(), "فرآورده [unused0] های");
        let toks: Vec<&str> = enc.content().split_whitespace().collect();
        assert_eq!(toks, vec!["فرآورده", "[unused0]", "های"]);
    }

    #[test]
    fn text_without_half_space_is_unchanged() {
        let enc = encode_special_tokens("سلام دنیا", DEFAULT_MARKER).unwrap();
        assert_eq!(enc.content(), "سلام دنیا");
        assert_eq!(decode_special_tokens(&enc), "سلام دنیا");
    }

    #[test]
    fn multiple_half_spaces() {
        let text = "a\u{200C}b\u{200C}c";
        let enc = encode_special_tokens(text, DEFAULT_MARKER).unwrap();
        assert_eq!(enc.content(), substitute_oracle(text, DEFAULT_MARKER));
        assert_eq!(enc.content(), "a [unused0] b [unused0] c");
        assert_eq!(enc.marker_count(), 2);
    }

    #[test]
    fn decode_worked_example() {
        let t = NormalizedText::from_encoded("فرآورده [unused0] های", DEFAULT_MARKER);
        assert_eq!(decode_special_tokens(&t), "فرآورده\u{200C}های");
        let plain = NormalizedText::from_encoded("hello world", DEFAULT_MARKER);
        assert_eq!(decode_special_tokens(&plain), "hello world");
    }

    #[test]
    fn marker_in_input_is_rejected() {
        let err = encode_special_tokens("x [unused0] y", DEFAULT_MARKER).unwrap_err();
        assert!(matches!(err, TextError::MarkerInInput { offset: 2, .. }));
        // stripping the zero-width space would splice a marker together
        let err = encode_special_tokens("<h\u{200B}fs>", TEXT_TO_TEXT_MARKER).unwrap_err();
        assert!(matches!(err, TextError::MarkerInInput { .. }));
    }

    #[test]
    fn bad_markers() {
        assert_eq!(encode_special_tokens("a", ""), Err(TextError::EmptyMarker));
        assert!(matches!(encode_special_tokens("a", "x y"), Err(TextError::WhitespaceInMarker(_))));
    }

    #[test]
    fn unwanted_characters_are_stripped() {
        let enc = encode_special_tokens("a\u{200B}b\u{FEFF}c\u{0007}d\re\nf\tg", "<hfs>").unwrap();
        assert_eq!(enc.content(), "abcde\nf\tg");
    }

    #[test]
    fn edge_positions_round_trip() {
        for s in ["\u{200C}", "\u{200C}\u{200C}", " \u{200C} ", "a \u{200C}b", "\u{200C}a\u{200C}", ""] {
            let enc = encode_special_tokens(s, DEFAULT_MARKER).unwrap();
            assert_eq!(decode_special_tokens(&enc), s, "{s:?}");
        }
    }

    #[test]
    fn decode_accepts_undelimited_edges() {
        assert_eq!(decode_marker("<hfs> ها", "<hfs>"), "\u{200C}ها");
        assert_eq!(decode_marker("کتاب <hfs>", "<hfs>"), "کتاب\u{200C}");
        // embedded in a longer token: not a marker
        assert_eq!(decode_marker("x<hfs>y", "<hfs>"), "x<hfs>y");
    }

    #[test]
    fn task_prefix() {
        assert_eq!(apply_task_prefix("متن خبر"), "summarize: متن خبر");
        assert_eq!(apply_task_prefix(""), "summarize: ");
        let body = "متن";
        assert_eq!(&apply_task_prefix(body)[TASK_PREFIX.len()..], body);
    }
}
