//! Multi-label contrastive pretraining with label-distribution recovery.
//!
//! The crate is layered bottom-up:
//!
//! * [`matrix`], [`rng`], [`ops`], [`tape`], [`gradcheck`]: dense `f64`
//!   numerics, deterministic randomness, and reverse-mode autodiff.
//! * [`optim`]: AdamW, cosine warm-restart schedule, EMA tracking.
//! * [`dataio`]: ARFF + label-list parsing, batching, view augmentation.
//! * [`model`], [`checkpoint`]: the two-tower MLP encoder pair with a
//!   distribution head, and its binary checkpoint format.
//! * [`memory`]: the FIFO memory of key embeddings, logical labels, and
//!   label distributions.
//! * [`objectives`]: the contrastive and label-distribution losses.
//! * [`metrics`]: multi-label evaluation.
//! * [`train`]: the pretraining and fine-tuning loops.

pub mod checkpoint;
pub mod dataio;
pub mod gradcheck;
pub mod matrix;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod train;

pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix, NumError};
pub use optim::{adamw_step, ema_update, AdamWState, Param, SgdrSchedule};
pub use rng::Rng;
pub use tape::{Grads, Tape, Var};
