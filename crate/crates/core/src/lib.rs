//! Library for locating a globally shared "toxic" subspace in the FFN value
//! vectors of a toy decoder-only transformer and removing it by orthogonal
//! projection, together with the activation-level experiments that motivate
//! the subspace view: vocabulary-projection inspection, activation steering,
//! cross-layer direction transfer, a factor-model recovery study, and a
//! small evaluation harness (perplexity, n-gram fluency, TF-IDF consistency,
//! lexicon toxicity proxy).

pub mod data;
pub mod error;
pub mod lens;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod steer;
pub mod synthfactor;
pub mod toy;

pub use error::{Error, Result};
