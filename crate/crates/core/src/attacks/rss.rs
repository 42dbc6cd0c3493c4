//! Representation-based similarity search: an index of raw (unencrypted)
//! representations queried by exhaustive cosine scan.

use crate::corpus::{Dataset, Vocab};
use crate::model::{encode, EncoderParams};
use crate::numerics::{cosine_sim, DenseVec};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RssEntry {
    pub sentence_id: usize,
    pub rep: DenseVec,
}

/// One entry per deduplicated sentence, encoded with the baseline encoder.
#[derive(Debug, Clone)]
pub struct RssIndex {
    pub entries: Vec<RssEntry>,
}

impl RssIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Encode every sentence and store `(id, representation)` for exhaustive
/// search. The dataset must already be deduplicated.
pub fn rss_build_index(dataset: &Dataset, enc: &EncoderParams, vocab: &Vocab) -> Result<RssIndex> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.sentences {
        let ids = vocab.encode_tokens(s);
        if ids.is_empty() {
            continue;
        }
        entries.push(RssEntry {
            sentence_id: s.id,
            rep: encode(enc, &ids)?,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RssIndex { entries })
}

/// Exhaustive scan for the entry with maximum cosine similarity; ties break
/// toward the lowest sentence id. A zero query vector is degenerate.
pub fn rss_query(index: &RssIndex, query: &DenseVec) -> Result<(usize, f64)> {
    if query.norm() == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    let mut best: Option<(usize, f64)> = None;
    for entry in &index.entries {
        let sim = cosine_sim(&entry.rep, query)?;
        let better = match best {
            None => true,
            Some((best_id, best_sim)) => {
                sim > best_sim || (sim == best_sim && entry.sentence_id < best_id)
            }
        };
        if better {
            best = Some((entry.sentence_id, sim));
        }
    }
    best.ok_or(Error::EmptyDataset)
}
