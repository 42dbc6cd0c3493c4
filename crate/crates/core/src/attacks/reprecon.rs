//! Reconstruction attack: train an MLP to map hidden representations back to
//! raw ones, then run similarity search on the reconstruction.

use super::rss::{rss_query, RssIndex};
use crate::model::Layer;
use crate::numerics::{adam_step, AdamConfig, DenseMat, DenseVec, OptState, RngStream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Reconstruction network `d -> h -> h -> d`: ReLU hidden layers, linear
/// output, trained with mean squared loss.
#[derive(Debug, Clone)]
pub struct ReconNet {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            hidden: 128,
            epochs: 20,
            batch_size: 32,
            learning_rate: 3e-3,
        }
    }
}

impl ReconNet {
    fn init(d: usize, hidden: usize, stream: &mut RngStream) -> ReconNet {
        let widths = [d, hidden, hidden, d];
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                let mut wm = DenseMat::zeros(w[1], w[0]);
                for x in wm.data_mut() {
                    *x = scale * stream.normal();
                }
                Layer {
                    w: wm,
                    b: DenseVec::zeros(w[1]),
                }
            })
            .collect();
        ReconNet { layers }
    }

    pub fn apply(&self, input: &DenseVec) -> DenseVec {
        let last = self.layers.len() - 1;
        let mut a = input.0.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.b.0) {
                *zi += bi;
            }
            a = if l == last {
                z
            } else {
                z.into_iter().map(|v| v.max(0.0)).collect()
            };
        }
        DenseVec(a)
    }

    fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }
}

/// Mean squared loss and parameter gradients for one minibatch.
fn batch_step(
    net: &ReconNet,
    batch: &[&(DenseVec, DenseVec)],
    grads: &mut [Layer],
) -> f64 {
    let last = net.layers.len() - 1;
    let d_out = net.layers[last].w.rows();
    let scale = 1.0 / (batch.len() * d_out) as f64;
    let mut loss = 0.0;
    for (input, target) in batch {
        let mut acts = Vec::with_capacity(net.layers.len());
        let mut pre = Vec::with_capacity(net.layers.len());
        let mut a = input.0.clone();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.b.0) {
                *zi += bi;
            }
            acts.push(a);
            a = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
        }
        let out = &pre[last];
        let mut delta: Vec<f64> = out
            .iter()
            .zip(&target.0)
            .map(|(o, t)| {
                let r = o - t;
                loss += r * r * scale;
                2.0 * r * scale
            })
            .collect();
        for l in (0..net.layers.len()).rev() {
            grads[l].w.add_outer(1.0, &delta, &acts[l]);
            for (b, dd) in grads[l].b.0.iter_mut().zip(&delta) {
                *b += dd;
            }
            if l > 0 {
                let upstream = net.layers[l].w.matvec_t(&delta);
                delta = upstream
                    .iter()
                    .zip(&pre[l - 1])
                    .map(|(u, z)| if *z > 0.0 { *u } else { 0.0 })
                    .collect();
            }
        }
    }
    loss
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut flat = Vec::new();
    for l in layers {
        flat.extend_from_slice(l.w.data());
        flat.extend_from_slice(l.b.as_slice());
    }
    flat
}

fn load_layers(layers: &mut [Layer], flat: &[f64]) {
    let mut offset = 0;
    for l in layers {
        let wlen = l.w.rows() * l.w.cols();
        l.w.data_mut().copy_from_slice(&flat[offset..offset + wlen]);
        offset += wlen;
        let blen = l.b.len();
        l.b.0.copy_from_slice(&flat[offset..offset + blen]);
        offset += blen;
    }
}

/// Train the reconstruction net on `(hidden, raw)` pairs; returns the net and
/// the per-epoch mean training loss.
pub fn reprecon_train(
    pairs: &[(DenseVec, DenseVec)],
    cfg: &ReconConfig,
    stream: &mut RngStream,
) -> Result<(ReconNet, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = pairs[0].0.len();
    let mut net = ReconNet::init(d, cfg.hidden, &mut stream.child("init"));
    let mut opt = OptState::new(net.n_params(), AdamConfig::with_lr(cfg.learning_rate));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = stream
            .child("shuffle")
            .child(epoch as u64)
            .permutation(pairs.len());
        if order.is_empty() {
            order = (0..pairs.len()).collect();
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&(DenseVec, DenseVec)> = chunk.iter().map(|&i| &pairs[i]).collect();
            let mut grads: Vec<Layer> = net
                .layers
                .iter()
                .map(|l| Layer {
                    w: DenseMat::zeros(l.w.rows(), l.w.cols()),
                    b: DenseVec::zeros(l.b.len()),
                })
                .collect();
            let loss = batch_step(&net, &batch, &mut grads);
            let mut flat = flatten_layers(&net.layers);
            adam_step(&mut flat, &flatten_layers(&grads), &mut opt)?;
            load_layers(&mut net.layers, &flat);
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok((net, epoch_losses))
}

/// Reconstruct the raw representation from a hidden query, then search.
pub fn reprecon_attack(
    net: &ReconNet,
    hidden_query: &DenseVec,
    index: &RssIndex,
) -> Result<(usize, f64)> {
    rss_query(index, &net.apply(hidden_query))
}
