//! Similarity metrics between a query's true sentence and an attack's answer,
//! plus the random baseline and aggregate reporting.
//!
//! `semantic_sim` is a stand-in scorer (TF-IDF cosine over a held-out
//! reference corpus) replacing a pretrained sentence encoder; reports label
//! it as a substitute and it carries no acceptance weight.

use crate::corpus::{tfidf_cosine, tfidf_vector, Sentence, Vocab};
use crate::numerics::RngStream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-query similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub identity: f64,
    pub jaccard: f64,
    pub tfidf_sim: f64,
    pub label_agree: f64,
    pub semantic_sim: f64,
}

/// 1 iff the token sequences are equal.
pub fn identity(x: &Sentence, x_star: &Sentence) -> f64 {
    if x.tokens == x_star.tokens {
        1.0
    } else {
        0.0
    }
}

/// `|tokens(x) ∩ tokens(x*)| / |tokens(x) ∪ tokens(x*)|` over token sets.
/// Two empty sentences count as identical (1).
pub fn jaccard(x: &Sentence, x_star: &Sentence) -> f64 {
    use std::collections::HashSet;
    let a: HashSet<&String> = x.tokens.iter().collect();
    let b: HashSet<&String> = x_star.tokens.iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    inter as f64 / union as f64
}

/// Cosine of L2-normalized TF-IDF vectors over the metric vocabulary;
/// nonnegative weights keep the range in [0, 1].
pub fn tfidf_sim(x: &Sentence, x_star: &Sentence, vocab: &Vocab) -> f64 {
    tfidf_cosine(&tfidf_vector(x, vocab), &tfidf_vector(x_star, vocab))
}

/// 1 iff both sentences carry the same label; unlabeled input is an error.
pub fn label_agree(x: &Sentence, x_star: &Sentence) -> Result<f64> {
    match (x.label, x_star.label) {
        (Some(a), Some(b)) => Ok(if a == b { 1.0 } else { 0.0 }),
        _ => Err(Error::Config("label_agree: missing label".into())),
    }
}

/// Pluggable semantic scorer; the default is TF-IDF cosine over a reference
/// corpus distinct from the metric corpus.
pub trait SemanticScorer: Sync {
    fn score(&self, x: &Sentence, x_star: &Sentence) -> f64;
}

pub struct TfidfSemanticScorer {
    reference_vocab: Vocab,
}

impl TfidfSemanticScorer {
    pub fn new(reference_vocab: Vocab) -> Self {
        TfidfSemanticScorer { reference_vocab }
    }
}

impl SemanticScorer for TfidfSemanticScorer {
    fn score(&self, x: &Sentence, x_star: &Sentence) -> f64 {
        tfidf_sim(x, x_star, &self.reference_vocab)
    }
}

/// All five metrics for one (query, answer) pair.
pub fn score_pair(
    x: &Sentence,
    x_star: &Sentence,
    vocab: &Vocab,
    semantic: &dyn SemanticScorer,
) -> Result<MetricsRow> {
    Ok(MetricsRow {
        identity: identity(x, x_star),
        jaccard: jaccard(x, x_star),
        tfidf_sim: tfidf_sim(x, x_star, vocab),
        label_agree: label_agree(x, x_star)?,
        semantic_sim: semantic.score(x, x_star),
    })
}

/// Arithmetic mean per metric.
pub fn aggregate(rows: &[MetricsRow]) -> Result<(MetricsRow, usize)> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = rows.len() as f64;
    Ok((
        MetricsRow {
            identity: rows.iter().map(|r| r.identity).sum::<f64>() / n,
            jaccard: rows.iter().map(|r| r.jaccard).sum::<f64>() / n,
            tfidf_sim: rows.iter().map(|r| r.tfidf_sim).sum::<f64>() / n,
            label_agree: rows.iter().map(|r| r.label_agree).sum::<f64>() / n,
            semantic_sim: rows.iter().map(|r| r.semantic_sim).sum::<f64>() / n,
        },
        rows.len(),
    ))
}

/// The naive attacker: answer every query with a uniformly random index
/// entry; returns the mean row over the query set.
pub fn random_baseline(
    index_sentences: &[&Sentence],
    queries: &[&Sentence],
    vocab: &Vocab,
    semantic: &dyn SemanticScorer,
    stream: &mut RngStream,
) -> Result<(MetricsRow, usize)> {
    if index_sentences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Result<Vec<MetricsRow>> = queries
        .iter()
        .map(|q| {
            let pick = index_sentences[stream.below(index_sentences.len() as u64) as usize];
            score_pair(q, pick, vocab, semantic)
        })
        .collect();
    aggregate(&rows?)
}
