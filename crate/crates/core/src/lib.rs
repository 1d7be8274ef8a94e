//! Euphemism detection for potentially euphemistic terms (PETs).
//!
//! A sentence containing a PET is scored by a language-model backend, either
//! on its own, inside a `Term: .. Description: .. Sentence: ..` prompt built
//! from a curated literal description, or with two projected visual imagery
//! vectors (mean encoder embeddings of generated images for the term and the
//! description) prepended to the prompt's token embeddings.

pub mod backend;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod imagery;
pub mod metrics;
pub mod optim;
pub mod prompting;
pub mod report;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
