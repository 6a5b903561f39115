//! 12-lead ECG classification toolkit.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`autodiff`], [`nn`]: dense arrays, a reverse-mode tape and
//!   the layers built from it (including GRU/LSTM cells and multi-head attention).
//! * [`signal`]: bandpass filtering, segment selection and normalization.
//! * [`augment`]: stochastic training-time transforms.
//! * [`dataio`]: WFDB/CSV ingestion, manifests, fold splits, synthetic data and batching.
//! * [`models`]: the nine classifier architectures.
//! * [`learn`]: losses, Adam, the training loop and evaluation metrics.
//! * [`transfer`]: checkpoints, head replacement and fine-tuning.

pub mod augment;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod labels;
pub mod learn;
pub mod models;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor;
