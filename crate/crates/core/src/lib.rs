//! Desk-scale laboratory for the two-stage code-switching-restore
//! finetuning recipe: unsupervised lexicon induction, corruption/restore
//! pair construction, a minimal trainable encoder-decoder, and the
//! accompanying analysis metrics.

pub mod align;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod noise;
pub mod pipeline;
pub mod scalar;
pub mod seq2seq;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type used by the pipeline and CLI.
pub type Real = f64;

/// Embedding matrix over the default scalar.
pub type EmbeddingMatrix = embed::EmbeddingMatrix<Real>;
pub type Seq2SeqModel = seq2seq::Seq2SeqModel<Real>;
