//! Text classification on word-level encrypted corpora.
//!
//! The pipeline cleans newsgroup posts, optionally replaces every token with a
//! deterministic AES-256-CBC ciphertoken, learns paragraph vectors, and fits
//! either a softmax gradient-boosted tree ensemble or a two-layer LSTM on the
//! document vectors. Because nothing downstream of vocabulary construction
//! looks at token content, a plaintext run and an encrypted run with the same
//! seed produce bit-identical models and metrics.

pub mod boost;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod formats;
pub mod pipeline;
pub mod recur;
pub mod rng;
pub mod textprep;
pub mod wordcrypt;

pub use error::{Error, Result};
