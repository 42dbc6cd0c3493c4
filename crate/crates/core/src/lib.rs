//! Representation-level encryption for federated text fine-tuning, plus the
//! attack suite that probes it.
//!
//! The library simulates a round-based federated loop in which clients encrypt
//! encoder outputs by mixing `k` representations (with soft labels) and
//! flipping signs with a mask drawn from a private pool of `m` sign vectors.
//! On top of that sit four adversaries: a gradient-matching attack with a
//! learned dummy mask, an exhaustive cosine similarity search over raw
//! representations, a reconstruction network that tries to undo the hiding,
//! and a brute-force subset-sum solver for planted instances.
//!
//! Everything is driven by keyed deterministic random streams so that a run
//! with a fixed seed produces byte-identical outputs at any worker count.

pub mod attacks;
pub mod config;
pub mod corpus;
pub mod experiments;
pub mod fedsim;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod texthide;

/// Identifies the keyed generator wired into [`numerics::RngStream`]; recorded
/// in run manifests so reports stay comparable across releases.
pub const RNG_VERSION: &str = "chacha12-sha256-path-v1";

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}:{line}: {msg}")]
    TsvParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("degenerate query")]
    DegenerateQuery,
    #[error("non-finite loss at round {round}, client {client}")]
    NonFiniteLoss { round: usize, client: u32 },
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
