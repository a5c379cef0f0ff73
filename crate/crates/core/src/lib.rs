//! Rhetorical role labeling for legal judgments: attention-augmented
//! BiLSTM-CRF sequence labelers with an optional label-shift auxiliary task,
//! plus the corpus, agreement, evaluation, and prompt-baseline tooling
//! around them.

pub mod annotation;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod llm;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod role;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use role::RhetoricalRole;
