//! Text ingestion, tokenization, vocabulary and TF-IDF statistics, plus the
//! synthetic labeled-corpus generator used for desk-scale experiments.

use crate::numerics::RngStream;
use crate::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// One labeled sentence. Public-corpus sentences carry `label = None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub raw_text: String,
    pub label: Option<usize>,
}

/// Whether a dataset's labels are usable for training/metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetRole {
    Private,
    Public,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub num_classes: usize,
    pub role: DatasetRole,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Copy with labels stripped; used for public mixing corpora.
    pub fn as_public(&self) -> Dataset {
        Dataset {
            sentences: self
                .sentences
                .iter()
                .map(|s| Sentence {
                    label: None,
                    ..s.clone()
                })
                .collect(),
            num_classes: self.num_classes,
            role: DatasetRole::Public,
        }
    }
}

/// Lowercase, split on Unicode whitespace, strip leading/trailing ASCII
/// punctuation per token, drop empties. Internal punctuation survives.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let t = w
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase();
            if t.is_empty() {
                None
            } else {
                Some(t)
            }
        })
        .collect()
}

/// Load a `label<TAB>text` TSV; ids follow line order.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let display = path.display().to_string();
    let mut sentences = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (label_str, text) = line.split_once('\t').ok_or_else(|| Error::TsvParse {
            path: display.clone(),
            line: lineno + 1,
            msg: "expected `label<TAB>text`".into(),
        })?;
        let label: usize = label_str.parse().map_err(|_| Error::TsvParse {
            path: display.clone(),
            line: lineno + 1,
            msg: format!("non-integer label {label_str:?}"),
        })?;
        max_label = max_label.max(label);
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::TsvParse {
                path: display.clone(),
                line: lineno + 1,
                msg: "sentence has no tokens".into(),
            });
        }
        sentences.push(Sentence {
            id: sentences.len(),
            tokens,
            raw_text: text.to_owned(),
            label: Some(label),
        });
    }
    if sentences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        sentences,
        num_classes: max_label + 1,
        role: DatasetRole::Private,
    })
}

/// Write a dataset in the same TSV format.
pub fn write_tsv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for s in &dataset.sentences {
        let _ = writeln!(out, "{}\t{}", s.label.unwrap_or(0), s.raw_text);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub vocab_size: usize,
    pub signal_tokens_per_class: usize,
    /// Inclusive token-count range per sentence.
    pub length_range: (usize, usize),
}

/// Generate a balanced synthetic corpus: each class owns a disjoint set of
/// signal tokens drawn with elevated probability on top of shared background
/// tokens, so a linear model over mean embeddings separates the classes.
pub fn gen_synthetic(spec: SyntheticSpec, stream: &mut RngStream) -> Result<Dataset> {
    let SyntheticSpec {
        num_classes,
        per_class,
        vocab_size,
        signal_tokens_per_class,
        length_range,
    } = spec;
    if num_classes == 0 || per_class == 0 || signal_tokens_per_class == 0 {
        return Err(Error::Config("gen_synthetic: counts must be positive".into()));
    }
    if vocab_size <= num_classes * signal_tokens_per_class {
        return Err(Error::Config(format!(
            "gen_synthetic: vocab_size {} must exceed signal tokens {}",
            vocab_size,
            num_classes * signal_tokens_per_class
        )));
    }
    if length_range.0 == 0 || length_range.0 > length_range.1 {
        return Err(Error::Config("gen_synthetic: bad length_range".into()));
    }
    let n_signal = num_classes * signal_tokens_per_class;
    let n_background = vocab_size - n_signal;
    let span = (length_range.1 - length_range.0 + 1) as u64;
    let mut sentences = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for _ in 0..per_class {
            let len = length_range.0 + stream.below(span) as usize;
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                // Half the tokens carry class signal, half are background.
                let t = if stream.uniform() < 0.5 {
                    class * signal_tokens_per_class
                        + stream.below(signal_tokens_per_class as u64) as usize
                } else {
                    n_signal + stream.below(n_background as u64) as usize
                };
                tokens.push(format!("w{t}"));
            }
            sentences.push(Sentence {
                id: sentences.len(),
                raw_text: tokens.join(" "),
                tokens,
                label: Some(class),
            });
        }
    }
    Ok(Dataset {
        sentences,
        num_classes,
        role: DatasetRole::Private,
    })
}

/// Token index, per-token document frequency, and corpus size.
#[derive(Debug, Clone)]
pub struct Vocab {
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    corpus_size: usize,
}

impl Vocab {
    /// Build over a corpus with min-count 1.
    pub fn build(dataset: &Dataset) -> Vocab {
        let mut index = HashMap::new();
        let mut doc_freq = Vec::new();
        for s in &dataset.sentences {
            let mut seen = std::collections::HashSet::new();
            for t in &s.tokens {
                let next = index.len();
                let id = *index.entry(t.clone()).or_insert_with(|| {
                    doc_freq.push(0);
                    next
                });
                if seen.insert(id) {
                    doc_freq[id] += 1;
                }
            }
        }
        Vocab {
            index,
            doc_freq,
            corpus_size: dataset.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    /// Smoothed idf: `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, id: usize) -> f64 {
        (((1 + self.corpus_size) as f64) / ((1 + self.doc_freq[id]) as f64)).ln() + 1.0
    }

    /// Token ids for a sentence, dropping out-of-vocab tokens.
    pub fn encode_tokens(&self, sentence: &Sentence) -> Vec<usize> {
        sentence
            .tokens
            .iter()
            .filter_map(|t| self.id(t))
            .collect()
    }
}

/// L2-normalized sparse TF-IDF weights, keyed by vocab id. Out-of-vocab
/// tokens are ignored; a fully out-of-vocab document yields the zero vector.
pub fn tfidf_vector(sentence: &Sentence, vocab: &Vocab) -> HashMap<usize, f64> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for t in &sentence.tokens {
        if let Some(id) = vocab.id(t) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    for (id, w) in counts.iter_mut() {
        *w *= vocab.idf(*id);
    }
    let norm: f64 = counts.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for w in counts.values_mut() {
            *w /= norm;
        }
    }
    counts
}

/// Cosine similarity of two sparse TF-IDF maps (both already normalized).
pub fn tfidf_cosine(a: &HashMap<usize, f64>, b: &HashMap<usize, f64>) -> f64 {
    let (small, big) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(id, w)| big.get(id).map(|v| w * v))
        .sum()
}

/// Remove sentences whose token sequences duplicate an earlier one.
pub fn dedup(dataset: &Dataset) -> Dataset {
    let mut seen = std::collections::HashSet::new();
    let sentences = dataset
        .sentences
        .iter()
        .filter(|s| seen.insert(s.tokens.clone()))
        .cloned()
        .collect();
    Dataset {
        sentences,
        num_classes: dataset.num_classes,
        role: dataset.role,
    }
}
