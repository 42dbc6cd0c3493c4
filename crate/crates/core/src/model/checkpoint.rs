//! Versioned binary model checkpoint: magic `THMC`, u32 format version, the
//! dimensions, then parameter blocks as little-endian f64.

use super::{ClassifierParams, EncoderParams, Layer, ModelDims, ModelParams};
use crate::numerics::{DenseMat, DenseVec};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"THMC";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let dims = params.dims();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        dims.vocab_size,
        dims.embed_dim,
        dims.rep_dim,
        dims.classifier_hidden.len(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &h in &dims.classifier_hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(dims.num_classes as u32).to_le_bytes());
    for x in params.to_flat() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let take4 = |pos: &mut usize| -> Result<[u8; 4]> {
        if *pos + 4 > buf.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let b: [u8; 4] = buf[*pos..*pos + 4].try_into().unwrap();
        *pos += 4;
        Ok(b)
    };
    if &take4(&mut pos)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take4(&mut pos)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let read_u32 = |pos: &mut usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take4(pos)?) as usize)
    };
    let vocab_size = read_u32(&mut pos)?;
    let embed_dim = read_u32(&mut pos)?;
    let rep_dim = read_u32(&mut pos)?;
    let n_hidden = read_u32(&mut pos)?;
    let mut classifier_hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        classifier_hidden.push(read_u32(&mut pos)?);
    }
    let num_classes = read_u32(&mut pos)?;
    let dims = ModelDims {
        vocab_size,
        embed_dim,
        rep_dim,
        classifier_hidden,
        num_classes,
    };

    let body = &buf[pos..];
    if body.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter block misaligned".into()));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut params = empty_params(&dims);
    params
        .load_flat(&flat)
        .map_err(|e| Error::Checkpoint(format!("parameter count mismatch: {e}")))?;
    Ok(params)
}

fn empty_params(dims: &ModelDims) -> ModelParams {
    let mut widths = vec![dims.rep_dim];
    widths.extend(&dims.classifier_hidden);
    widths.push(dims.num_classes);
    ModelParams {
        enc: EncoderParams {
            embedding: DenseMat::zeros(dims.vocab_size, dims.embed_dim),
            proj_w: DenseMat::zeros(dims.rep_dim, dims.embed_dim),
            proj_b: DenseVec::zeros(dims.rep_dim),
        },
        clf: ClassifierParams {
            layers: widths
                .windows(2)
                .map(|w| Layer {
                    w: DenseMat::zeros(w[1], w[0]),
                    b: DenseVec::zeros(w[1]),
                })
                .collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_stream;

    #[test]
    fn checkpoint_roundtrips_bitwise() {
        let dims = ModelDims {
            vocab_size: 15,
            embed_dim: 4,
            rep_dim: 6,
            classifier_hidden: vec![5, 3],
            num_classes: 2,
        };
        let params = ModelParams::init(&dims, &mut seeded_stream(31, &["ckpt"]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.thmc");
        write_checkpoint(&params, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.thmc");
        std::fs::write(&path, b"NOTME123").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
