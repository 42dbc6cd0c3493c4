//! The encryption core: sign-mask pools, mixing-coefficient sampling,
//! permutations, intra-dataset hiding, the inter-dataset variant with
//! renormalized private labels, and per-epoch mask scheduling.
//!
//! A hidden example is `e~ = sigma o sum_j lambda_j e_{pi_j(i)}` with the soft
//! label mixed by the same coefficients. The `(sigma, partners, lambda)`
//! triple is the one-time key; it lives in [`KeyContext`], which never leaves
//! the simulated client.

use crate::model::{EncodingBatch, SoftLabel};
use crate::numerics::{DenseVec, RngStream};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Magic bytes of the mask pool dump format.
pub const MASK_POOL_MAGIC: &[u8; 4] = b"THMP";

/// An entry-wise sign-flipping mask; every coordinate is exactly +1 or -1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(pub DenseVec);

impl Mask {
    pub fn random(d: usize, stream: &mut RngStream) -> Mask {
        Mask(DenseVec((0..d).map(|_| stream.rademacher()).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Coordinate-wise multiplication. Exact in floating point, so applying a
    /// mask twice is the bitwise identity.
    pub fn apply(&self, v: &DenseVec) -> DenseVec {
        self.0.hadamard(v)
    }
}

/// A client's pool of `m` pre-generated masks; `m = 0` denotes the identity
/// (no masking) pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPool {
    dim: usize,
    masks: Vec<Mask>,
}

impl MaskPool {
    /// Sample `m` masks i.i.d. uniform over `{-1, +1}^d`.
    pub fn generate(m: usize, d: usize, stream: &mut RngStream) -> MaskPool {
        MaskPool {
            dim: d,
            masks: (0..m).map(|_| Mask::random(d, stream)).collect(),
        }
    }

    pub fn identity(d: usize) -> MaskPool {
        MaskPool {
            dim: d,
            masks: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.masks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, index: usize) -> &Mask {
        &self.masks[index]
    }

    /// Binary dump (test/debug only; never part of server-visible output):
    /// magic, u32 m, u32 d, packed sign bits (bit set = +1), mask-major,
    /// LSB-first.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MASK_POOL_MAGIC);
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let total = self.m() * self.dim;
        let mut bits = vec![0u8; total.div_ceil(8)];
        for (i, mask) in self.masks.iter().enumerate() {
            for (j, &s) in mask.0 .0.iter().enumerate() {
                if s > 0.0 {
                    let bit = i * self.dim + j;
                    bits[bit / 8] |= 1 << (bit % 8);
                }
            }
        }
        out.extend_from_slice(&bits);
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn read_dump(path: impl AsRef<Path>) -> Result<MaskPool> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 12 || &buf[0..4] != MASK_POOL_MAGIC {
            return Err(Error::Checkpoint("bad mask pool magic".into()));
        }
        let m = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let total = m * d;
        let bits = &buf[12..];
        if bits.len() != total.div_ceil(8) {
            return Err(Error::Checkpoint("mask pool dump truncated".into()));
        }
        let masks = (0..m)
            .map(|i| {
                Mask(DenseVec(
                    (0..d)
                        .map(|j| {
                            let bit = i * d + j;
                            if bits[bit / 8] >> (bit % 8) & 1 == 1 {
                                1.0
                            } else {
                                -1.0
                            }
                        })
                        .collect(),
                ))
            })
            .collect();
        Ok(MaskPool { dim: d, masks })
    }
}

/// How the mask for each batch example is chosen.
#[derive(Debug, Clone, Copy)]
pub enum MaskSchedule<'a> {
    /// Draw uniformly from the pool per example (the per-batch regime);
    /// identity when the pool is empty.
    PerBatch,
    /// Pre-assigned pool indices, one per batch example (per-epoch rotation).
    Assigned(&'a [usize]),
    /// Fresh random sign vector per example, no pool (the `m = infinity`
    /// grid point).
    Fresh,
}

/// The mask actually applied to one hidden example.
#[derive(Debug, Clone, PartialEq)]
pub enum AppliedMask {
    None,
    Pool { index: usize, sign: Mask },
    Fresh(Mask),
}

impl AppliedMask {
    pub fn sign(&self) -> Option<&Mask> {
        match self {
            AppliedMask::None => None,
            AppliedMask::Pool { sign, .. } => Some(sign),
            AppliedMask::Fresh(sign) => Some(sign),
        }
    }
}

/// Where each mixture slot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSource {
    /// Index into the private encoding batch.
    Private(usize),
    /// Index into the public representation cache (no gradient, no label).
    Public(usize),
}

/// Server-visible output of hiding: encrypted representation + soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenExample {
    pub rep: DenseVec,
    pub label: SoftLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBatch {
    pub examples: Vec<HiddenExample>,
}

impl HiddenBatch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// The retained plumbing a client needs to backpropagate through its own
/// encryption: coefficients, applied masks, slot provenance, and the source
/// token sequences. Never serialized into server-visible artifacts.
#[derive(Debug, Clone)]
pub struct KeyContext {
    /// `b x k` mixing coefficients; rows on the simplex.
    pub lambda: Vec<Vec<f64>>,
    /// Applied mask per example.
    pub masks: Vec<AppliedMask>,
    /// `b x k` slot provenance.
    pub slots: Vec<Vec<SlotSource>>,
    /// Token ids of the private sources, in batch order.
    pub sources: Vec<Vec<usize>>,
}

impl KeyContext {
    pub fn batch_size(&self) -> usize {
        self.lambda.len()
    }
}

/// Sample the `b x k` coefficient matrix: each row is `k` absolute values of
/// standard normals normalized to sum 1.
pub fn sample_lambda(b: usize, k: usize, stream: &mut RngStream) -> Vec<Vec<f64>> {
    assert!(k >= 1);
    (0..b)
        .map(|_| loop {
            let mut row: Vec<f64> = (0..k).map(|_| stream.normal().abs()).collect();
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for x in &mut row {
                    *x /= sum;
                }
                return row;
            }
            // All-zero draw has probability zero; resample if it happens.
        })
        .collect()
}

/// `pi_1 = identity`, `pi_2..pi_k` uniform permutations of `[b]`.
pub fn gen_permutations(b: usize, k: usize, stream: &mut RngStream) -> Vec<Vec<usize>> {
    let mut perms = Vec::with_capacity(k);
    perms.push((0..b).collect());
    for _ in 1..k {
        perms.push(stream.permutation(b));
    }
    perms
}

/// Pool index for `(example, epoch)`; keyed by the client stream's label path
/// so the draw is independent of batch order and thread schedule.
pub fn epoch_mask_index(
    client_stream: &RngStream,
    epoch: u64,
    example_id: usize,
    m: usize,
) -> usize {
    client_stream
        .child("epoch")
        .child(epoch)
        .child("mask")
        .child(example_id)
        .below(m as u64) as usize
}

/// Fresh uniform mask assignment for every example in one epoch.
pub fn assign_epoch_masks(
    pool: &MaskPool,
    example_ids: &[usize],
    epoch: u64,
    client_stream: &RngStream,
) -> BTreeMap<usize, usize> {
    assert!(pool.m() >= 1, "assign_epoch_masks requires a nonempty pool");
    example_ids
        .iter()
        .map(|&id| (id, epoch_mask_index(client_stream, epoch, id, pool.m())))
        .collect()
}

fn pick_mask(
    pool: &MaskPool,
    schedule: &MaskSchedule,
    i: usize,
    d: usize,
    stream: &mut RngStream,
) -> Result<AppliedMask> {
    match schedule {
        MaskSchedule::PerBatch => {
            if pool.is_identity() {
                Ok(AppliedMask::None)
            } else {
                let index = stream.below(pool.m() as u64) as usize;
                Ok(AppliedMask::Pool {
                    index,
                    sign: pool.get(index).clone(),
                })
            }
        }
        MaskSchedule::Assigned(indices) => {
            if pool.is_identity() {
                return Ok(AppliedMask::None);
            }
            let index = *indices
                .get(i)
                .ok_or_else(|| Error::Shape("mask assignment shorter than batch".into()))?;
            if index >= pool.m() {
                return Err(Error::Shape(format!(
                    "mask index {index} out of pool ({})",
                    pool.m()
                )));
            }
            Ok(AppliedMask::Pool {
                index,
                sign: pool.get(index).clone(),
            })
        }
        MaskSchedule::Fresh => Ok(AppliedMask::Fresh(Mask::random(d, stream))),
    }
}

fn check_pool_dim(batch: &EncodingBatch, pool: &MaskPool) -> Result<usize> {
    let d = batch
        .reps
        .first()
        .map(DenseVec::len)
        .ok_or(Error::EmptyDataset)?;
    if !pool.is_identity() && pool.dim() != d {
        return Err(Error::Shape(format!(
            "mask pool dim {} vs representation dim {d}",
            pool.dim()
        )));
    }
    Ok(d)
}

/// Intra-dataset hiding: every mixture slot comes from the batch itself.
pub fn hide_batch_intra(
    batch: &EncodingBatch,
    pool: &MaskPool,
    k: usize,
    schedule: MaskSchedule,
    stream: &mut RngStream,
) -> Result<(HiddenBatch, KeyContext)> {
    let d = check_pool_dim(batch, pool)?;
    let b = batch.len();
    let perms = gen_permutations(b, k, stream);
    let lambda = sample_lambda(b, k, stream);

    let mut examples = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    let mut slots = Vec::with_capacity(b);
    for i in 0..b {
        let slot_row: Vec<SlotSource> = (0..k).map(|j| SlotSource::Private(perms[j][i])).collect();
        let (mix, label) = if k == 1 {
            // lambda is exactly [1.0]; the mixture is the example itself.
            (batch.reps[i].clone(), batch.labels[i].clone())
        } else {
            let mut mix = DenseVec::zeros(d);
            let mut label = vec![0.0; batch.labels[i].len()];
            for j in 0..k {
                let src = perms[j][i];
                mix.axpy(lambda[i][j], &batch.reps[src]);
                for (acc, y) in label.iter_mut().zip(&batch.labels[src].0) {
                    *acc += lambda[i][j] * y;
                }
            }
            (mix, SoftLabel(label))
        };
        let mask = pick_mask(pool, &schedule, i, d, stream)?;
        let rep = match mask.sign() {
            Some(sign) => sign.apply(&mix),
            None => mix,
        };
        examples.push(HiddenExample { rep, label });
        masks.push(mask);
        slots.push(slot_row);
    }
    Ok((
        HiddenBatch { examples },
        KeyContext {
            lambda,
            masks,
            slots,
            sources: batch.token_ids.clone(),
        },
    ))
}

/// Inter-dataset hiding: slot 1 is the example itself, the remaining
/// `ceil(k/2) - 1` private slots are permutations of the batch, and the last
/// `floor(k/2)` slots are drawn with replacement from a public representation
/// cache. Only private labels are mixed, renormalized by the private
/// coefficient mass, so public labels can never influence the output.
pub fn hide_batch_inter(
    batch: &EncodingBatch,
    public_reps: &[DenseVec],
    pool: &MaskPool,
    k: usize,
    schedule: MaskSchedule,
    stream: &mut RngStream,
) -> Result<(HiddenBatch, KeyContext)> {
    if public_reps.is_empty() {
        return Err(Error::Config("hide_batch_inter: empty public corpus".into()));
    }
    let d = check_pool_dim(batch, pool)?;
    if public_reps.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("public representation dim mismatch".into()));
    }
    let b = batch.len();
    let n_private = k.div_ceil(2);
    let perms = gen_permutations(b, n_private, stream);
    let lambda = sample_lambda(b, k, stream);

    let mut examples = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    let mut slots = Vec::with_capacity(b);
    for i in 0..b {
        let mut slot_row = Vec::with_capacity(k);
        let (mix, label) = if k == 1 {
            slot_row.push(SlotSource::Private(i));
            (batch.reps[i].clone(), batch.labels[i].clone())
        } else {
            let mut mix = DenseVec::zeros(d);
            let mut label = vec![0.0; batch.labels[i].len()];
            let mut private_mass = 0.0;
            for (j, lam) in lambda[i].iter().enumerate() {
                if j < n_private {
                    let src = perms[j][i];
                    slot_row.push(SlotSource::Private(src));
                    mix.axpy(*lam, &batch.reps[src]);
                    private_mass += lam;
                    for (acc, y) in label.iter_mut().zip(&batch.labels[src].0) {
                        *acc += lam * y;
                    }
                } else {
                    let idx = stream.below(public_reps.len() as u64) as usize;
                    slot_row.push(SlotSource::Public(idx));
                    mix.axpy(*lam, &public_reps[idx]);
                }
            }
            for acc in &mut label {
                *acc /= private_mass;
            }
            (mix, SoftLabel(label))
        };
        let mask = pick_mask(pool, &schedule, i, d, stream)?;
        let rep = match mask.sign() {
            Some(sign) => sign.apply(&mix),
            None => mix,
        };
        examples.push(HiddenExample { rep, label });
        masks.push(mask);
        slots.push(slot_row);
    }
    Ok((
        HiddenBatch { examples },
        KeyContext {
            lambda,
            masks,
            slots,
            sources: batch.token_ids.clone(),
        },
    ))
}
