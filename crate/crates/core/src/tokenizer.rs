//! Whitespace tokenizer over a frequency-ranked vocabulary.
//!
//! Ids 0..=4 are reserved for pad, decoder-start, end-of-sequence, unknown and
//! the half-space marker, in that order. On disk a vocabulary is one surface
//! per line with the line number as the id.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::text::{NormalizedText, DEFAULT_MARKER};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const DECODER_START_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const HALF_SPACE_ID: TokenId = 4;
pub const NUM_SPECIAL: usize = 5;

pub const PAD_SURFACE: &str = "<pad>";
pub const DECODER_START_SURFACE: &str = "<s>";
pub const EOS_SURFACE: &str = "</s>";
pub const UNK_SURFACE: &str = "<unk>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary size {0} leaves no room for the {NUM_SPECIAL} special tokens")]
    TooSmall(usize),
    #[error("token id {id} is out of range for a vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("duplicate vocabulary entry {surface:?} on lines {first} and {second}")]
    Duplicate { surface: String, first: usize, second: usize },
    #[error("vocabulary line {line}: {reason}")]
    BadEntry { line: usize, reason: String },
    #[error("vocabulary special token at id {id} is {found:?}, expected {expected:?}")]
    BadSpecial { id: TokenId, found: String, expected: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A list of vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_entries_unchecked(entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, s)| (s.clone(), i as TokenId)).collect();
        Self { entries, index }
    }

    fn specials(marker: &str) -> Vec<String> {
        vec![
            PAD_SURFACE.to_string(),
            DECODER_START_SURFACE.to_string(),
            EOS_SURFACE.to_string(),
            UNK_SURFACE.to_string(),
            marker.to_string(),
        ]
    }

    /// Builds a vocabulary of at most `max_size` entries using the default
    /// half-space marker.
    pub fn build<'a, I>(corpus: I, max_size: usize) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::build_with_marker(corpus, max_size, DEFAULT_MARKER)
    }

    /// Specials first, then corpus tokens by descending frequency with ties
    /// broken lexicographically.
    pub fn build_with_marker<'a, I>(corpus: I, max_size: usize, marker: &str) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < NUM_SPECIAL {
            return Err(VocabError::TooSmall(max_size));
        }
        let specials = Self::specials(marker);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for tok in text.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|(tok, _)| !specials.iter().any(|s| s == tok)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut entries = specials;
        entries.extend(ranked.into_iter().take(max_size - NUM_SPECIAL).map(|(tok, _)| tok.to_string()));
        Ok(Self::from_entries_unchecked(entries))
    }

    /// Validates an explicit entry list: unique, whitespace-free surfaces with
    /// the fixed special tokens at ids 0..=3 and a marker at id 4.
    pub fn from_entries(entries: Vec<String>) -> Result<Self, VocabError> {
        if entries.len() < NUM_SPECIAL {
            return Err(VocabError::TooSmall(entries.len()));
        }
        let fixed = [PAD_SURFACE, DECODER_START_SURFACE, EOS_SURFACE, UNK_SURFACE];
        for (id, expected) in fixed.iter().enumerate() {
            if entries[id] != *expected {
                return Err(VocabError::BadSpecial {
                    id: id as TokenId,
                    found: entries[id].clone(),
                    expected: expected.to_string(),
                });
            }
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (line, entry) in entries.iter().enumerate() {
            if entry.is_empty() || entry.chars().any(char::is_whitespace) {
                return Err(VocabError::BadEntry {
                    line: line + 1,
                    reason: "entries must be non-empty and whitespace-free".into(),
                });
            }
            if let Some(first) = seen.insert(entry, line + 1) {
                return Err(VocabError::Duplicate { surface: entry.clone(), first, second: line + 1 });
            }
        }
        Ok(Self::from_entries_unchecked(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path)?;
        Self::from_entries(text.lines().map(str::to_string).collect())
    }

    /// One surface per line; line number (from zero) is the id.
    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        fs::write(path, self.to_file_contents())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn marker_surface(&self) -> &str {
        &self.entries[HALF_SPACE_ID as usize]
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Whitespace-split lookup with unknown tokens mapped to [`UNK_ID`].
    pub fn encode_str(&self, text: &str) -> TokenSequence {
        TokenSequence(text.split_whitespace().map(|tok| self.id(tok).unwrap_or(UNK_ID)).collect())
    }

    pub fn encode(&self, text: &NormalizedText) -> TokenSequence {
        let mut seq = self.encode_str(text.content());
        // The text may carry a different marker surface than this vocabulary.
        if text.marker() != self.marker_surface() {
            for (tok, id) in text.content().split_whitespace().zip(seq.0.iter_mut()) {
                if tok == text.marker() {
                    *id = HALF_SPACE_ID;
                }
            }
        }
        seq
    }

    /// Joins surfaces with single spaces, skipping pad, decoder-start and eos.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            let surface = self.surface(id).ok_or(VocabError::IdOutOfRange { id, size: self.len() })?;
            if matches!(id, PAD_ID | DECODER_START_ID | EOS_ID) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(surface);
        }
        Ok(out)
    }

    /// Decodes into marker-carrying text ready for half-space decoding.
    pub fn decode_normalized(&self, ids: &[TokenId]) -> Result<NormalizedText, VocabError> {
        Ok(NormalizedText::from_encoded(self.decode(ids)?, self.marker_surface()))
    }
}
