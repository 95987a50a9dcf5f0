//! News-summary corpus loading, statistics and splitting.
//!
//! The on-disk format is UTF-8 TSV with a header row. Required columns are
//! `id`, `title`, `article`, `summary`, `category` and `network` (the news
//! agency); extra columns are ignored. Field values escape backslash, tab,
//! carriage return and newline as `\\`, `\t`, `\r` and `\n`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::{decode_all_markers, is_unwanted};

pub const REQUIRED_COLUMNS: [&str; 6] = ["id", "title", "article", "summary", "category", "network"];

/// Width of a summary-length histogram bucket, in tokens.
pub const LENGTH_BUCKET_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    /// 1-based line number in the file; the header is line 1.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("{} invalid row(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    InvalidRows(Vec<RowIssue>),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub article: String,
    pub summary: String,
    pub category: String,
    /// News agency the document was collected from.
    pub source: String,
}

pub fn unescape_field(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn escape_field(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn is_blank_after_normalization(s: &str) -> bool {
    s.chars().all(|c| c.is_whitespace() || is_unwanted(c))
}

/// Parses TSV text. All row problems are collected before failing.
pub fn parse_corpus(text: &str) -> Result<Vec<Document>, DatasetError> {
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(text);
    let mut lines = text.split('\n').enumerate();
    let header = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h.trim_end_matches('\r'),
        _ => return Err(DatasetError::MalformedHeader("missing header row".into())),
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(REQUIRED_COLUMNS) {
        let found: Vec<usize> =
            columns.iter().enumerate().filter(|(_, c)| **c == name).map(|(i, _)| i).collect();
        match found.as_slice() {
            [i] => *slot = *i,
            [] => return Err(DatasetError::MalformedHeader(format!("missing column {name:?}"))),
            _ => {
                return Err(DatasetError::MalformedHeader(format!("column {name:?} appears more than once")))
            }
        }
    }

    let mut docs = Vec::new();
    let mut issues = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < columns.len() {
            issues.push(RowIssue {
                line,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
            continue;
        }
        let get = |k: usize| unescape_field(fields[index[k]]);
        let doc = Document {
            id: get(0),
            title: get(1),
            article: get(2),
            summary: get(3),
            category: get(4),
            source: get(5),
        };
        let mut row_ok = true;
        if doc.id.trim().is_empty() {
            issues.push(RowIssue { line, message: "empty id".into() });
            row_ok = false;
        }
        for (what, value) in [("article", &doc.article), ("summary", &doc.summary)] {
            if is_blank_after_normalization(value) {
                issues.push(RowIssue { line, message: format!("empty {what}") });
                row_ok = false;
            }
        }
        if !doc.id.trim().is_empty() {
            if let Some(first) = seen_ids.get(&doc.id) {
                issues.push(RowIssue {
                    line,
                    message: format!("duplicate id {:?} (first seen on line {first})", doc.id),
                });
                row_ok = false;
            } else {
                seen_ids.insert(doc.id.clone(), line);
            }
        }
        if row_ok {
            docs.push(doc);
        }
    }
    if issues.is_empty() {
        Ok(docs)
    } else {
        Err(DatasetError::InvalidRows(issues))
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, DatasetError> {
    parse_corpus(&fs::read_to_string(path)?)
}

pub fn write_corpus(docs: &[Document]) -> String {
    let mut out = REQUIRED_COLUMNS.join("\t");
    out.push('\n');
    for d in docs {
        let fields = [&d.id, &d.title, &d.article, &d.summary, &d.category, &d.source];
        let escaped: Vec<String> = fields.iter().map(|f| escape_field(f)).collect();
        out.push_str(&escaped.join("\t"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total_docs: usize,
    pub category_freq: BTreeMap<String, usize>,
    pub source_freq: BTreeMap<String, usize>,
    /// Keyed by bucket lower bound (multiples of [`LENGTH_BUCKET_WIDTH`]).
    pub summary_length_histogram: BTreeMap<usize, usize>,
}

pub fn summary_length(summary: &str) -> usize {
    decode_all_markers(summary).split_whitespace().count()
}

pub fn compute_stats(docs: &[Document]) -> CorpusStats {
    let mut stats = CorpusStats { total_docs: docs.len(), ..Default::default() };
    for d in docs {
        *stats.category_freq.entry(d.category.clone()).or_default() += 1;
        *stats.source_freq.entry(d.source.clone()).or_default() += 1;
        let bucket = summary_length(&d.summary) / LENGTH_BUCKET_WIDTH * LENGTH_BUCKET_WIDTH;
        *stats.summary_length_histogram.entry(bucket).or_default() += 1;
    }
    stats
}

impl CorpusStats {
    /// `section, key, count` rows with a header.
    pub fn to_report(&self) -> String {
        let mut out = String::from("section\tkey\tcount\n");
        out.push_str(&format!("total\tdocuments\t{}\n", self.total_docs));
        for (k, v) in &self.category_freq {
            out.push_str(&format!("category\t{}\t{v}\n", escape_field(k)));
        }
        for (k, v) in &self.source_freq {
            out.push_str(&format!("source\t{}\t{v}\n", escape_field(k)));
        }
        for (k, v) in &self.summary_length_histogram {
            out.push_str(&format!("summary_length\t{}-{}\t{v}\n", k, k + LENGTH_BUCKET_WIDTH - 1));
        }
        out
    }

    /// `bucket, count` pairs for plotting the summary-length distribution.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("bucket\tcount\n");
        for (k, v) in &self.summary_length_histogram {
            out.push_str(&format!("{k}\t{v}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
}

/// Seeded shuffle followed by a contiguous train/validation/test partition.
/// Validation and test sizes are floored; the remainder goes to train.
pub fn split_corpus(docs: &[Document], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit, DatasetError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(DatasetError::InvalidRatios(format!("{ratios:?} has a negative or non-finite entry")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(format!("{ratios:?} sums to {sum}, not 1")));
    }
    let n = docs.len();
    let n_val = (n as f64 * ratios[1]).floor() as usize;
    let n_test = (n as f64 * ratios[2]).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: pick(0..n_train),
        validation: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}
