use alloc::string::String;

/// Errors raised by the pure pipeline stages.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id {0}")]
    DuplicateDocId(String),
    #[error("document {0} has no sentences")]
    EmptyDocument(String),
    #[error("document {doc} has origin {found:?} but corpus is {expected:?}")]
    OriginMismatch {
        doc: String,
        expected: crate::Origin,
        found: crate::Origin,
    },
    #[error("shard size must be positive")]
    ZeroShardSize,
    #[error("invalid ruleset: {0}")]
    InvalidRuleset(String),
    #[error("invalid tree number {0:?}")]
    InvalidTreeNumber(String),
    #[error("empty training stream")]
    EmptyStream,
    #[error("target size {target} does not exceed alphabet ({alphabet}) plus special tokens ({specials})")]
    TargetTooSmall {
        target: usize,
        alphabet: usize,
        specials: usize,
    },
    #[error("vocabulary is missing required token {0}")]
    MissingToken(&'static str),
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("simpt requires a non-empty {0} shard list")]
    NoShards(&'static str),
    #[error("no documents to generate instances from")]
    NoDocuments,
}

pub type Result<T> = core::result::Result<T, Error>;
