//! Pure algorithms for balanced BERT-style pre-training data.
//!
//! The crate covers corpus sharding, MeSH tree-number filtering, text
//! normalization, BPE vocabulary training (with small-corpus amplification),
//! WordPiece tokenization, MLM/NSP instance generation in balanced and
//! conventional modes, and the statistics used to verify generated streams.
//!
//! Everything here is `no_std` with `alloc`; file formats, parallel
//! execution and the command line live in the `bpt` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod corpus;
pub mod error;
pub mod instances;
pub mod mesh;
pub mod normalize;
pub mod rng;
pub mod stats;
pub mod vocab;
pub mod wordpiece;

pub use corpus::{split_corpus, Corpus, Document, Origin, Shard};
pub use error::Error;
pub use instances::{InstanceConfig, PretrainInstance};
pub use vocab::Vocabulary;
pub use wordpiece::WordPiece;
