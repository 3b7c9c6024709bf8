//! Verbatim-match tracing of language-model output against a tokenized
//! training corpus.
//!
//! The corpus is indexed into immutable suffix-array shards
//! ([`builder`]), queried through a disk-backed engine ([`index`]), and a
//! response is traced by the five-step [`pipeline`]: maximal matching
//! spans, unigram-probability filtering, document retrieval, merging, and
//! BM25 reranking.

pub mod builder;
pub mod counters;
pub mod error;
pub mod index;
pub mod pipeline;
pub mod shard;
pub mod suffix_array;
pub mod takedown;
pub mod tokenizer;
pub mod unigram;
pub mod validate;

pub use builder::{ingest, BuildConfig, BuildSummary, DocumentRecord, IndexBuilder, Vocabulary};
pub use counters::{ProbeCounters, ProbeStats};
pub use error::{Error, Result};
pub use index::{DocumentSnippet, FetchRequest, Index, PrefixMatch};
pub use pipeline::{Relevance, TraceConfig, TraceResult, Tracer};
pub use shard::{SaSegment, Shard, Stage};
pub use takedown::TakedownReport;
pub use tokenizer::{Encoding, TokenClassTable, TokenId};
pub use validate::{validate_shard, ValidationReport};
