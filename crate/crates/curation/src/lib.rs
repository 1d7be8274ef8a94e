//! Curation service for literal descriptions: lexicon edits with optimistic
//! concurrency and an append-only audit log, imagery previews, and
//! re-scoring of validation examples under a draft description.

pub mod http;
pub mod service;

pub use service::{CurationService, ServiceConfig, ServiceError};
