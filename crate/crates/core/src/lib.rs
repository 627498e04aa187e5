//! Online supervised hashing with growing ternary error-correcting output codes.
//!
//! Linear threshold hash functions are learned from a labeled stream with
//! stochastic gradient descent on a hinge upper bound of the Hamming loss
//! between the hash code of a point and the codeword of its label. Codewords
//! are ternary: every label owns `k` active bits inside the column block of
//! the cycle in which it was first seen, and all other positions are
//! inactive. Each cycle of `rho` new labels appends `k` columns (and `k` hash
//! functions), so a training step only ever modifies the `k` functions of one
//! block. The index module turns that sparsity into fewer bit recomputations
//! for points stored under their learned codes.
//!
//! Modules, bottom up:
//!
//! - [`bitcode`]: packed binary and ternary codes, (masked) Hamming distance.
//! - [`codebook`]: the random pool of `k`-bit cores and its diagnostics.
//! - [`ecoc`]: the growing code matrix and its cycle bookkeeping.
//! - [`learner`]: hash model, surrogate loss, gradient and the SGD step.
//! - [`index`]: codeword / Φ-mode hash table with update accounting.
//! - [`eval`]: AP/mAP, synthetic data and the streaming experiment harness.
//! - [`data`] and [`persist`]: feature files, model files and index files.
//!
//! With the default `parallel` feature the batch loops (index refresh,
//! ranking, per-query scoring, per-ordering runs) run on rayon; without it
//! the same code runs sequentially and produces identical results.

pub mod bitcode;
pub mod codebook;
pub mod data;
pub mod ecoc;
pub mod error;
pub mod eval;
pub mod index;
pub mod learner;
mod par;
pub mod persist;

pub use bitcode::{PackedCode, TernaryCodeword};
pub use codebook::Codebook;
pub use data::{FeatureSet, Label, Normalizer, Sample};
pub use ecoc::EcocMatrix;
pub use error::{Error, Result};
pub use index::{HashIndex, IndexMode, RefreshPolicy, UpdateLedger};
pub use learner::{HashModel, LossKind, StepReport, Trainer, TrainerConfig};
pub use persist::ModelFile;
