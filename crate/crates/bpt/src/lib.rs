//! File formats, parallel pipeline and command line for balanced
//! pre-training data. The algorithms live in [`bpt_core`].

pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod verify;
pub mod vocab_io;

pub use error::{Error, Result};
