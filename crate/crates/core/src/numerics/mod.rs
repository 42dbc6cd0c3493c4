//! Deterministic random streams, dense vector/matrix kernels, optimizers, and
//! a finite-difference gradient checker shared by training and attacks.

mod check;
mod linalg;
mod optim;
mod rng;

pub use check::{grad_check, GradCheckError};
pub use linalg::{cosine_sim, mse, DenseMat, DenseVec};
pub use optim::{adam_step, sgd_step, AdamConfig, OptState};
pub use rng::{seeded_stream, PathSeg, RngStream};
