//! Desk-scale laboratory for black-box language-model provenance.
//!
//! The crate pretrains a tiny decoder-only LM, optimizes adversarial token
//! embeddings and plugs them into the vocabulary as copyright tokens,
//! forges fine-tuned/perturbed derivative models, and identifies suspects
//! through a text-only black-box interface using the target-response-rate
//! metric.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod forge;
pub mod gcg;
pub mod loss;
pub mod model;
pub mod plugae;
pub mod query;
pub mod rng;
pub mod scenario;
pub mod template;
pub mod train;
pub mod vocab;
pub mod wire;

pub use error::{Error, Result};
pub use model::{ModelConfig, Parameters};
pub use vocab::{TokenId, Vocab};
