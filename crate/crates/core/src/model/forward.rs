//! Forward passes: encode (mean pool + projection + tanh), classify (ReLU MLP
//! + softmax), and the soft-target cross-entropy.

use super::{ClassifierParams, EncoderParams, SoftLabel, CE_EPS};
use crate::numerics::DenseVec;
use crate::{Error, Result};

/// Intermediates of one encode, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    /// Mean of token embeddings.
    pub mean_emb: Vec<f64>,
    /// `tanh` output; the representation.
    pub rep: DenseVec,
}

/// Encode with cached intermediates.
pub fn encode_cached(enc: &EncoderParams, token_ids: &[usize]) -> Result<EncodeTrace> {
    if token_ids.is_empty() {
        return Err(Error::Shape("encode: empty token list".into()));
    }
    let d_e = enc.embed_dim();
    let mut mean_emb = vec![0.0; d_e];
    for &t in token_ids {
        if t >= enc.vocab_size() {
            return Err(Error::Shape(format!(
                "encode: token id {t} out of vocabulary ({})",
                enc.vocab_size()
            )));
        }
        for (m, x) in mean_emb.iter_mut().zip(enc.embedding.row(t)) {
            *m += x;
        }
    }
    let inv = 1.0 / token_ids.len() as f64;
    for m in &mut mean_emb {
        *m *= inv;
    }
    let mut z = enc.proj_w.matvec(&mean_emb);
    for (zi, bi) in z.iter_mut().zip(&enc.proj_b.0) {
        *zi += bi;
    }
    let rep = DenseVec(z.iter().map(|v| v.tanh()).collect());
    Ok(EncodeTrace { mean_emb, rep })
}

/// Mean-pooled embedding, affine projection, tanh.
pub fn encode(enc: &EncoderParams, token_ids: &[usize]) -> Result<DenseVec> {
    Ok(encode_cached(enc, token_ids)?.rep)
}

/// Numerically shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Classifier intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct ClfTrace {
    /// `activations[0]` is the input; one entry per layer input.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pub pre_acts: Vec<Vec<f64>>,
    /// Softmax output.
    pub probs: Vec<f64>,
}

/// MLP forward with cached activations.
pub fn clf_forward(clf: &ClassifierParams, rep: &DenseVec) -> Result<ClfTrace> {
    if rep.len() != clf.input_dim() {
        return Err(Error::Shape(format!(
            "classify: input {} vs expected {}",
            rep.len(),
            clf.input_dim()
        )));
    }
    let n_layers = clf.layers.len();
    let mut activations = Vec::with_capacity(n_layers);
    let mut pre_acts = Vec::with_capacity(n_layers);
    let mut a = rep.0.clone();
    for (l, layer) in clf.layers.iter().enumerate() {
        let mut z = layer.w.matvec(&a);
        for (zi, bi) in z.iter_mut().zip(&layer.b.0) {
            *zi += bi;
        }
        activations.push(a);
        let last = l == n_layers - 1;
        a = if last {
            z.clone()
        } else {
            z.iter().map(|v| v.max(0.0)).collect()
        };
        pre_acts.push(z);
    }
    let probs = softmax(pre_acts.last().unwrap());
    Ok(ClfTrace {
        activations,
        pre_acts,
        probs,
    })
}

/// Softmax class probabilities for a representation.
pub fn classify(clf: &ClassifierParams, rep: &DenseVec) -> Result<SoftLabel> {
    Ok(SoftLabel(clf_forward(clf, rep)?.probs))
}

/// `-sum_c target_c * ln(pred_c + 1e-12)`.
pub fn soft_ce_loss(pred: &SoftLabel, target: &SoftLabel) -> f64 {
    pred.0
        .iter()
        .zip(&target.0)
        .map(|(p, t)| -t * (p + CE_EPS).ln())
        .sum()
}
