//! The toy differentiable pipeline standing in for encoder fine-tuning: an
//! encoder (embedding + mean pool + projection + tanh), an MLP classifier
//! with softmax output, soft-label cross-entropy, and hand-written backward
//! passes — including the one that backpropagates through the encryption.

mod backward;
mod checkpoint;
mod forward;

pub use backward::{backward_batch, backward_plain};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{classify, clf_forward, encode, encode_cached, soft_ce_loss, softmax, ClfTrace, EncodeTrace};

use crate::numerics::{DenseMat, DenseVec, RngStream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Guard added inside the cross-entropy log.
pub const CE_EPS: f64 = 1e-12;

/// Model dimensions; fixed for the lifetime of a parameter set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub rep_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
}

/// A probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel(pub Vec<f64>);

impl SoftLabel {
    pub fn one_hot(class: usize, num_classes: usize) -> SoftLabel {
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        SoftLabel(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries nonnegative, summing to 1 within 1e-9.
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|p| *p >= 0.0)
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Encoder parameters (embedding table + projection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `vocab_size x embed_dim`.
    pub embedding: DenseMat,
    /// `rep_dim x embed_dim`.
    pub proj_w: DenseMat,
    pub proj_b: DenseVec,
}

impl EncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn rep_dim(&self) -> usize {
        self.proj_w.rows()
    }
}

/// One dense layer, stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: DenseMat,
    pub b: DenseVec,
}

/// MLP classifier: ReLU hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub layers: Vec<Layer>,
}

impl ClassifierParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }
}

/// Full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub enc: EncoderParams,
    pub clf: ClassifierParams,
}

impl ModelParams {
    /// Seeded initialization: embeddings scaled normal, projection Xavier
    /// uniform, hidden layers He normal, output layer Xavier uniform.
    pub fn init(dims: &ModelDims, stream: &mut RngStream) -> ModelParams {
        let mut emb_s = stream.child("embedding");
        let mut embedding = DenseMat::zeros(dims.vocab_size, dims.embed_dim);
        for x in embedding.data_mut() {
            *x = 0.1 * emb_s.normal();
        }
        let mut proj_s = stream.child("projection");
        let a = (6.0 / (dims.embed_dim + dims.rep_dim) as f64).sqrt();
        let mut proj_w = DenseMat::zeros(dims.rep_dim, dims.embed_dim);
        for x in proj_w.data_mut() {
            *x = a * (2.0 * proj_s.uniform() - 1.0);
        }
        let proj_b = DenseVec::zeros(dims.rep_dim);

        let mut widths = vec![dims.rep_dim];
        widths.extend(&dims.classifier_hidden);
        widths.push(dims.num_classes);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let mut layer_s = stream.descend(&["clf", &l.to_string()]);
            let mut w = DenseMat::zeros(fan_out, fan_in);
            let last = l == widths.len() - 2;
            if last {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for x in w.data_mut() {
                    *x = a * (2.0 * layer_s.uniform() - 1.0);
                }
            } else {
                let std = (2.0 / fan_in as f64).sqrt();
                for x in w.data_mut() {
                    *x = std * layer_s.normal();
                }
            }
            layers.push(Layer {
                w,
                b: DenseVec::zeros(fan_out),
            });
        }
        ModelParams {
            enc: EncoderParams {
                embedding,
                proj_w,
                proj_b,
            },
            clf: ClassifierParams { layers },
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.enc.vocab_size(),
            embed_dim: self.enc.embed_dim(),
            rep_dim: self.enc.rep_dim(),
            classifier_hidden: self
                .clf
                .layers
                .iter()
                .take(self.clf.layers.len() - 1)
                .map(|l| l.w.rows())
                .collect(),
            num_classes: self.clf.num_classes(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.flat_blocks().iter().map(|b| b.len()).sum()
    }

    fn flat_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = vec![
            self.enc.embedding.data(),
            self.enc.proj_w.data(),
            self.enc.proj_b.as_slice(),
        ];
        for l in &self.clf.layers {
            blocks.push(l.w.data());
            blocks.push(l.b.as_slice());
        }
        blocks
    }

    fn flat_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = vec![
            self.enc.embedding.data_mut(),
            self.enc.proj_w.data_mut(),
            &mut self.enc.proj_b.0,
        ];
        for l in &mut self.clf.layers {
            blocks.push(l.w.data_mut());
            blocks.push(&mut l.b.0);
        }
        blocks
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.flat_blocks().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for block in self.flat_blocks_mut() {
            let next = offset + block.len();
            if next > flat.len() {
                return Err(Error::Shape("load_flat: vector too short".into()));
            }
            block.copy_from_slice(&flat[offset..next]);
            offset = next;
        }
        if offset != flat.len() {
            return Err(Error::Shape("load_flat: vector too long".into()));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.enc.embedding.all_finite()
            && self.enc.proj_w.all_finite()
            && self.enc.proj_b.all_finite()
            && self
                .clf
                .layers
                .iter()
                .all(|l| l.w.all_finite() && l.b.all_finite())
    }
}

/// Gradient mirror of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub embedding: DenseMat,
    pub proj_w: DenseMat,
    pub proj_b: DenseVec,
    pub clf: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Gradients {
        Gradients {
            embedding: DenseMat::zeros(params.enc.vocab_size(), params.enc.embed_dim()),
            proj_w: DenseMat::zeros(params.enc.rep_dim(), params.enc.embed_dim()),
            proj_b: DenseVec::zeros(params.enc.rep_dim()),
            clf: params
                .clf
                .layers
                .iter()
                .map(|l| Layer {
                    w: DenseMat::zeros(l.w.rows(), l.w.cols()),
                    b: DenseVec::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut blocks = vec![
            self.embedding.data(),
            self.proj_w.data(),
            self.proj_b.as_slice(),
        ];
        for l in &self.clf {
            blocks.push(l.w.data());
            blocks.push(l.b.as_slice());
        }
        blocks.concat()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        let dst = [
            self.embedding.data_mut(),
            self.proj_w.data_mut(),
            &mut self.proj_b.0,
        ];
        let src = [
            other.embedding.data(),
            other.proj_w.data(),
            other.proj_b.as_slice(),
        ];
        for (d, s) in dst.into_iter().zip(src) {
            for (a, b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
        for (dl, sl) in self.clf.iter_mut().zip(&other.clf) {
            for (a, b) in dl.w.data_mut().iter_mut().zip(sl.w.data()) {
                *a += b;
            }
            for (a, b) in dl.b.0.iter_mut().zip(&sl.b.0) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.embedding.data_mut() {
            *x *= alpha;
        }
        for x in self.proj_w.data_mut() {
            *x *= alpha;
        }
        for x in &mut self.proj_b.0 {
            *x *= alpha;
        }
        for l in &mut self.clf {
            for x in l.w.data_mut() {
                *x *= alpha;
            }
            for x in &mut l.b.0 {
                *x *= alpha;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// An encoding batch: token ids, one-hot labels, and the representations
/// produced by the current encoder.
#[derive(Debug, Clone)]
pub struct EncodingBatch {
    pub token_ids: Vec<Vec<usize>>,
    pub labels: Vec<SoftLabel>,
    pub reps: Vec<DenseVec>,
}

impl EncodingBatch {
    /// Encode a batch of (token ids, label) pairs with the current encoder.
    pub fn encode(enc: &EncoderParams, examples: Vec<(Vec<usize>, SoftLabel)>) -> Result<EncodingBatch> {
        let mut token_ids = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        let mut reps = Vec::with_capacity(examples.len());
        for (ids, label) in examples {
            reps.push(encode(enc, &ids)?);
            token_ids.push(ids);
            labels.push(label);
        }
        Ok(EncodingBatch {
            token_ids,
            labels,
            reps,
        })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_stream;

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab_size: 12,
            embed_dim: 4,
            rep_dim: 6,
            classifier_hidden: vec![5, 5],
            num_classes: 3,
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_shapes_chain() {
        let dims = small_dims();
        let a = ModelParams::init(&dims, &mut seeded_stream(3, &["init"]));
        let b = ModelParams::init(&dims, &mut seeded_stream(3, &["init"]));
        assert_eq!(a, b);
        assert_eq!(a.dims(), dims);
        assert!(a.all_finite());
    }

    #[test]
    fn flat_roundtrip_preserves_params() {
        let dims = small_dims();
        let a = ModelParams::init(&dims, &mut seeded_stream(4, &["init"]));
        let flat = a.to_flat();
        assert_eq!(flat.len(), a.n_params());
        let mut b = ModelParams::init(&dims, &mut seeded_stream(5, &["init"]));
        b.load_flat(&flat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_mirror_and_accumulate() {
        let dims = small_dims();
        let p = ModelParams::init(&dims, &mut seeded_stream(6, &["init"]));
        let mut g = Gradients::zeros_like(&p);
        assert_eq!(g.to_flat().len(), p.n_params());
        let mut g2 = Gradients::zeros_like(&p);
        g2.proj_b[0] = 2.0;
        g.add_assign(&g2);
        g.scale(0.5);
        assert_eq!(g.proj_b[0], 1.0);
        assert_eq!(g.norm(), 1.0);
    }

    #[test]
    fn soft_label_one_hot_and_argmax() {
        let y = SoftLabel::one_hot(2, 4);
        assert!(y.is_valid());
        assert_eq!(y.argmax(), 2);
        let invalid = SoftLabel(vec![0.5, 0.6]);
        assert!(!invalid.is_valid());
    }
}
