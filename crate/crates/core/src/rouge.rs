//! ROUGE-1, ROUGE-2 and ROUGE-L scoring.
//!
//! Texts are half-space decoded and split on whitespace; there is no
//! stemming or stop-word removal. N-gram overlap is the clipped multiset
//! intersection. ROUGE-L uses a single longest common subsequence over the
//! whole summary with newlines treated as spaces. Corpus scores are
//! per-document means.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::text::decode_all_markers;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RougeError {
    #[error("cannot aggregate ROUGE over an empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / candidate_total as f64;
        let recall = overlap as f64 / reference_total as f64;
        Self::from_pr(precision, recall)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    decode_all_markers(text).split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn rouge_n_tokens(
    candidate: &[String],
    reference: &[String],
    n: usize,
) -> Result<RougeScore, RougeError> {
    if n == 0 {
        return Err(RougeError::ZeroOrder);
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    Ok(RougeScore::from_counts(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    ))
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore, RougeError> {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(lcs_length(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    // whitespace splitting already treats newlines as separators
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorpusRouge {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn document_rouge(candidate: &str, reference: &str) -> CorpusRouge {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    CorpusRouge {
        rouge1: rouge_n_tokens(&c, &r, 1).expect("n = 1"),
        rouge2: rouge_n_tokens(&c, &r, 2).expect("n = 2"),
        rouge_l: rouge_l_tokens(&c, &r),
    }
}

/// Per-document mean of precision, recall and F1 for each metric.
pub fn corpus_rouge<C, R>(pairs: &[(C, R)]) -> Result<CorpusRouge, RougeError>
where
    C: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(RougeError::EmptyCorpus);
    }
    let n = pairs.len() as f64;
    let mut sums = [[0.0f64; 3]; 3];
    for (c, r) in pairs {
        let d = document_rouge(c.as_ref(), r.as_ref());
        for (acc, s) in sums.iter_mut().zip([d.rouge1, d.rouge2, d.rouge_l]) {
            acc[0] += s.precision;
            acc[1] += s.recall;
            acc[2] += s.f1;
        }
    }
    let mean = |a: [f64; 3]| RougeScore { precision: a[0] / n, recall: a[1] / n, f1: a[2] / n };
    Ok(CorpusRouge { rouge1: mean(sums[0]), rouge2: mean(sums[1]), rouge_l: mean(sums[2]) })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Aligned F1 table, ×100 with two decimals.
pub fn render_table(rows: &[(&str, CorpusRouge)]) -> String {
    let width = rows.iter().map(|(m, _)| m.chars().count()).chain(["Model".len()]).max().unwrap_or(5);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}", "Model", "R-1", "R-2", "R-L").unwrap();
    for (model, s) in rows {
        writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}",
            model,
            pct(s.rouge1.f1),
            pct(s.rouge2.f1),
            pct(s.rouge_l.f1)
        )
        .unwrap();
    }
    out
}

/// Tab-separated `model, R-1, R-2, R-L` with a header row.
pub fn render_tsv(rows: &[(&str, CorpusRouge)]) -> String {
    let mut out = String::from("model\tR-1\tR-2\tR-L\n");
    for (model, s) in rows {
        writeln!(out, "{model}\t{}\t{}\t{}", pct(s.rouge1.f1), pct(s.rouge2.f1), pct(s.rouge_l.f1)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn bigram_hand_example() {
        let s = rouge_n("a b c", "a b d", 2).unwrap();
        assert!(close(s.precision, 0.5) && close(s.recall, 0.5) && close(s.f1, 0.5));
    }

    #[test]
    fn self_and_disjoint() {
        let s = rouge_n("x y z", "x y z", 1).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_n("a b", "c d", 1).unwrap(), RougeScore::default());
        assert_eq!(rouge_n("a", "a", 2).unwrap(), RougeScore::default());
        assert_eq!(rouge_n("a", "a", 0), Err(RougeError::ZeroOrder));
    }

    #[test]
    fn clipped_counts() {
        // candidate repeats "a" three times, reference has it twice
        let s = rouge_n("a a a", "a a b", 1).unwrap();
        assert!(close(s.precision, 2.0 / 3.0) && close(s.recall, 2.0 / 3.0));
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_length(&["a", "b", "c", "d"], &["a", "c", "b", "d"]), 3);
        assert_eq!(lcs_length(&[1, 2, 3], &[1, 2, 3]), 3);
        assert_eq!(lcs_length::<u8>(&[1, 2], &[]), 0);
    }

    #[test]
    fn rouge_l_hand_example() {
        let s = rouge_l("a b c d e", "a c e");
        assert!(close(s.precision, 0.6) && close(s.recall, 1.0) && close(s.f1, 0.75));
        assert_eq!(rouge_l("a b\nc", "a b c"), rouge_l("a b c", "a b c"));
        assert_eq!(rouge_l("", "a"), RougeScore::default());
    }

    #[test]
    fn half_space_words_are_single_tokens() {
        assert_eq!(tokenize("فرآورده\u{200C}های نفتی").len(), 2);
        assert_eq!(tokenize("فرآورده [unused0] های"), tokenize("فرآورده\u{200C}های"));
    }

    #[test]
    fn corpus_mean_and_report() {
        assert_eq!(corpus_rouge::<&str, &str>(&[]), Err(RougeError::EmptyCorpus));
        let one = corpus_rouge(&[("a b c", "a b d")]).unwrap();
        assert_eq!(one, document_rouge("a b c", "a b d"));
        let two = corpus_rouge(&[("a b", "a b"), ("a b c", "a b d")]).unwrap();
        assert!(close(two.rouge2.f1, 0.75));

        let perfect = corpus_rouge(&[("x y", "x y")]).unwrap();
        assert_eq!(render_tsv(&[("b2b", perfect)]), "model\tR-1\tR-2\tR-L\nb2b\t100.00\t100.00\t100.00\n");
        let table = render_table(&[("b2b", perfect)]);
        assert_eq!(table.lines().nth(1).unwrap(), "b2b    100.00  100.00  100.00");
    }
}
