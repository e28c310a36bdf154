//! Explainable text classification: small recurrent and convolutional
//! classifiers over word embeddings, with layer-wise relevance
//! propagation explanations per prediction.

// the numeric kernels use explicit index loops on purpose: the index
// arithmetic mirrors the derivations and has to stay auditable
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod lrp;
pub mod mat;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
