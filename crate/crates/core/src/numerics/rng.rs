//! Keyed deterministic random streams.
//!
//! Every consumer of randomness (a client, an attack trial, an epoch mask
//! draw) owns a stream keyed by `(root_seed, label_path)`. The key is hashed
//! into a ChaCha12 seed, so two runs with the same seed produce identical
//! draws per consumer no matter how work is scheduled across threads. The
//! scheme is versioned as [`crate::RNG_VERSION`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// One segment of a stream's label path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathSeg {
    Str(String),
    Int(u64),
}

impl From<&str> for PathSeg {
    fn from(s: &str) -> Self {
        PathSeg::Str(s.to_owned())
    }
}

impl From<String> for PathSeg {
    fn from(s: String) -> Self {
        PathSeg::Str(s)
    }
}

impl From<u64> for PathSeg {
    fn from(v: u64) -> Self {
        PathSeg::Int(v)
    }
}

impl From<u32> for PathSeg {
    fn from(v: u32) -> Self {
        PathSeg::Int(v as u64)
    }
}

impl From<usize> for PathSeg {
    fn from(v: usize) -> Self {
        PathSeg::Int(v as u64)
    }
}

/// A deterministic random stream identified by `(root_seed, label_path)`.
///
/// Identical identities yield identical draw sequences; distinct label paths
/// yield independent streams. Cloning a stream clones its position.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<PathSeg>,
    rng: ChaCha12Rng,
}

fn derive_key(root_seed: u64, path: &[PathSeg]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    for seg in path {
        match seg {
            PathSeg::Str(s) => {
                h.update([0x01]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            PathSeg::Int(v) => {
                h.update([0x02]);
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Build the stream for `(root_seed, label_path)`.
pub fn seeded_stream<S: Into<PathSeg> + Clone>(root_seed: u64, label_path: &[S]) -> RngStream {
    let path: Vec<PathSeg> = label_path.iter().cloned().map(Into::into).collect();
    RngStream::from_path(root_seed, path)
}

impl RngStream {
    pub fn from_path(root_seed: u64, path: Vec<PathSeg>) -> Self {
        let rng = ChaCha12Rng::from_seed(derive_key(root_seed, &path));
        RngStream {
            root_seed,
            path,
            rng,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[PathSeg] {
        &self.path
    }

    /// A fresh child stream whose label path extends this one's.
    ///
    /// Derivation depends only on the identity of `self`, never on how many
    /// draws it has consumed.
    pub fn child<S: Into<PathSeg>>(&self, seg: S) -> RngStream {
        let mut path = self.path.clone();
        path.push(seg.into());
        RngStream::from_path(self.root_seed, path)
    }

    /// Child stream several segments deeper.
    pub fn descend<S: Into<PathSeg> + Clone>(&self, segs: &[S]) -> RngStream {
        let mut path = self.path.clone();
        path.extend(segs.iter().cloned().map(Into::into));
        RngStream::from_path(self.root_seed, path)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        // Rejection sampling over the largest multiple of n.
        let zone = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Rademacher draw: +1.0 or -1.0 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform permutation of `[0, n)` by Fisher-Yates.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}
