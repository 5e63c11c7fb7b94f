//! Named-entity recognition cast as query-driven span extraction.
//!
//! For every entity type a natural-language query is paired with the
//! sentence, a small transformer encoder reads `[CLS] query [SEP] sentence [SEP]`,
//! and start/end heads pick out the answer span. Answers to different queries
//! are independent, so nested and overlapping entities of different types
//! come out naturally.

pub mod cli;
pub mod data_model;
pub mod encoder;
pub mod error;
pub mod ingestion;
pub mod model;
pub mod pipeline;
pub mod span_model;
pub mod synth;

pub use error::{Error, Result};
