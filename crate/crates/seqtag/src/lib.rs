//! From-scratch sequence labeling: linear, CRF, and BiLSTM-CRF taggers
//! over pluggable token embeddings, with CoNLL I/O and entity-level
//! evaluation. No external math or ML dependencies; every forward pass
//! has a matching hand-written backward pass.

pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod numeric;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
