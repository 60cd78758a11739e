//! Caption quality scores: corpus-level BLEU-4 and consensus-based CIDEr.
//!
//! Both metrics operate on [`TokenizedCaption`]s produced by a single
//! deterministic tokenizer: lowercase, strip punctuation to whitespace,
//! split on whitespace. BLEU-4 pools clipped n-gram counts across the
//! corpus (no smoothing) with the closest-reference brevity penalty. CIDEr
//! is the plain TF-IDF variant: cosine similarity of TF-IDF-weighted n-gram
//! vectors for n = 1..4, averaged over references and n, scaled by 10,
//! with document frequency counted over each entry's reference set.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const MAX_NGRAM: usize = 4;
/// Native CIDEr scale factor; per-entry scores land in [0, 10].
const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("caption corpus is empty")]
    EmptyCorpus,
    #[error("corpus entry {0} has no references")]
    NoReferences(usize),
    #[error("tokenized caption contains an empty token")]
    EmptyToken,
    #[error("CIDEr needs at least 2 corpus entries, got {0} (IDF degenerate)")]
    DegenerateIdf(usize),
}

/// Ordered lowercased word tokens of one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    tokens: Vec<String>,
}

impl TokenizedCaption {
    /// Tokenize raw text: lowercase, replace every non-alphanumeric
    /// character with a space, split on whitespace.
    pub fn tokenize(text: &str) -> Self {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        Self {
            tokens: cleaned.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Build from pre-split tokens; empty tokens are rejected.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CaptionError> {
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(CaptionError::EmptyToken);
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Join tokens with single spaces; tokenizing the result reproduces
    /// the same token sequence.
    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Candidate caption plus at least one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub candidate: TokenizedCaption,
    pub references: Vec<TokenizedCaption>,
}

/// Paired candidate/reference corpus shared by both scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionCorpus {
    entries: Vec<CorpusEntry>,
}

impl CaptionCorpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, CaptionError> {
        for (i, e) in entries.iter().enumerate() {
            if e.references.is_empty() {
                return Err(CaptionError::NoReferences(i));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

type NgramCounts = BTreeMap<Vec<String>, usize>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts {
    let mut counts = NgramCounts::new();
    if tokens.len() >= n && n > 0 {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 in [0, 1]: geometric mean of pooled clipped n-gram
/// precisions for n = 1..4 times the brevity penalty. Any zero pooled
/// precision (including candidates too short to have 4-grams anywhere)
/// makes the score 0; no smoothing is applied.
pub fn bleu4(corpus: &CaptionCorpus) -> Result<f64, CaptionError> {
    if corpus.is_empty() {
        return Err(CaptionError::EmptyCorpus);
    }

    let mut clipped = [0usize; MAX_NGRAM];
    let mut total = [0usize; MAX_NGRAM];
    let mut candidate_len = 0usize;
    let mut reference_len = 0usize;

    for entry in corpus.entries() {
        let cand = entry.candidate.tokens();
        candidate_len += cand.len();
        reference_len += closest_reference_length(cand.len(), &entry.references);

        for n in 1..=MAX_NGRAM {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: NgramCounts = NgramCounts::new();
            for r in &entry.references {
                for (gram, count) in ngram_counts(r.tokens(), n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, &count) in &cand_counts {
                total[n - 1] += count;
                clipped[n - 1] += count.min(max_ref.get(gram).copied().unwrap_or(0));
            }
        }
    }

    if candidate_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_NGRAM {
        if total[n] == 0 || clipped[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped[n] as f64 / total[n] as f64).ln();
    }
    let bp = if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };
    Ok(bp * (log_sum / MAX_NGRAM as f64).exp())
}

/// Reference length closest to the candidate length; ties go to the
/// shorter reference.
fn closest_reference_length(cand_len: usize, references: &[TokenizedCaption]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&rl| (rl.abs_diff(cand_len), rl))
        .expect("entry has at least one reference")
}

type TfIdfVector = BTreeMap<Vec<String>, f64>;

fn tfidf_vector(
    tokens: &[String],
    n: usize,
    idf: &BTreeMap<Vec<String>, f64>,
    n_docs: f64,
) -> TfIdfVector {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(gram, count)| {
            let w = idf.get(&gram).copied().unwrap_or_else(|| n_docs.ln());
            (gram, count as f64 * w)
        })
        .collect()
}

fn cosine(a: &TfIdfVector, b: &TfIdfVector) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(gram, &va)| b.get(gram).map(|&vb| va * vb))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Corpus CIDEr (mean of per-entry scores) plus the per-entry scores.
pub fn cider_detailed(corpus: &CaptionCorpus) -> Result<(f64, Vec<f64>), CaptionError> {
    if corpus.len() < 2 {
        return Err(CaptionError::DegenerateIdf(corpus.len()));
    }
    let n_docs = corpus.len() as f64;

    // Document frequency per n-gram: one document = one entry's reference
    // set. Grams absent from every reference set fall back to df = 1.
    let mut idf: Vec<BTreeMap<Vec<String>, f64>> = vec![BTreeMap::new(); MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for entry in corpus.entries() {
            let mut in_entry: std::collections::BTreeSet<Vec<String>> = Default::default();
            for r in &entry.references {
                in_entry.extend(ngram_counts(r.tokens(), n).into_keys());
            }
            for gram in in_entry {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        idf[n - 1] = df
            .into_iter()
            .map(|(gram, d)| (gram, (n_docs / (d.max(1) as f64)).ln()))
            .collect();
    }

    let mut per_entry = Vec::with_capacity(corpus.len());
    for entry in corpus.entries() {
        let mut score = 0.0;
        for n in 1..=MAX_NGRAM {
            let cand_vec = tfidf_vector(entry.candidate.tokens(), n, &idf[n - 1], n_docs);
            let mut ref_sum = 0.0;
            for r in &entry.references {
                let ref_vec = tfidf_vector(r.tokens(), n, &idf[n - 1], n_docs);
                ref_sum += cosine(&cand_vec, &ref_vec);
            }
            score += ref_sum / entry.references.len() as f64;
        }
        per_entry.push(CIDER_SCALE * score / MAX_NGRAM as f64);
    }
    let corpus_score = per_entry.iter().sum::<f64>() / per_entry.len() as f64;
    Ok((corpus_score, per_entry))
}

/// Corpus CIDEr score (non-negative, at most 10 per entry natively).
pub fn cider(corpus: &CaptionCorpus) -> Result<f64, CaptionError> {
    cider_detailed(corpus).map(|(score, _)| score)
}
