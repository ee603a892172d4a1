//! Differentially private training and disparity auditing at desk scale.
//!
//! The crate trains small classifiers with per-example gradient clipping
//! and Gaussian noise (the private counterpart of plain SGD, plus an Adam
//! variant), prices the privacy of a run with a Rényi-DP accountant,
//! simulates private federated averaging, and measures what privacy does
//! to per-class and per-subgroup accuracy.
//!
//! Modules, bottom up:
//!
//! * [`tensor`] / [`rng`] — dense `f64` tensors and a seedable,
//!   bit-reproducible random source.
//! * [`model`] — MLP/convnet forward, softmax cross-entropy, whole-batch
//!   and per-example gradients.
//! * [`optim`] — clipping, noise, SGD/Adam steps and the training loop
//!   with ablation modes.
//! * [`accountant`] — subsampled-Gaussian RDP composed over steps and
//!   converted to (ε, δ).
//! * [`fed`] — private federated averaging in a single process.
//! * [`data`] — IDX ingestion, synthetic blobs, imbalancing, sharding.
//! * [`audit`] — per-group evaluation, parity gaps, drop correlations.
//!
//! The long-form guide with worked examples lives in `book/`; its code
//! blocks compile as doc-tests of this crate (see [`guide`]).

pub mod accountant;
pub mod audit;
pub mod data;
pub mod error;
pub mod fed;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

mod guide;

pub use error::{Error, Result};
