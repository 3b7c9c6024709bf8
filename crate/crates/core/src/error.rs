use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed index file: {0}")]
    Format(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty corpus: at least one document is required")]
    EmptyCorpus,

    #[error("document {doc_index} ({source_name}) has {tokens} tokens and cannot fit in a shard capped at {cap} tokens")]
    DocumentTooLarge {
        doc_index: u64,
        source_name: String,
        tokens: u64,
        cap: u64,
    },

    #[error("shards were built with different tokenizers ({0} vs {1})")]
    TokenizerMismatch(String, String),

    #[error("query must be non-empty")]
    EmptyQuery,

    #[error("query contains the document separator id")]
    SeparatorInQuery,

    #[error("query does not occur in shard {0}")]
    NotFound(u32),

    #[error("document {shard_id}:{doc_id} is unknown or unavailable")]
    DocumentUnavailable { shard_id: u32, doc_id: u64 },

    #[error("unknown shard {0}")]
    UnknownShard(u32),

    #[error("unknown documents: {}", format_docs(.unknown))]
    UnknownDocuments {
        unknown: Vec<(u32, u64)>,
        report: crate::takedown::TakedownReport,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

fn format_docs(docs: &[(u32, u64)]) -> String {
    docs.iter()
        .map(|(s, d)| format!("{s}:{d}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
