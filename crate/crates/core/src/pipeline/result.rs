use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::pipeline::Relevance;
use crate::shard::Stage;

/// A merged matching span of the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanResult {
    pub id: usize,
    /// Half-open token range into the response.
    pub begin: usize,
    pub end: usize,
    /// Half-open range in Unicode scalar values into the response text.
    pub char_begin: usize,
    pub char_end: usize,
    pub text: String,
    pub relevance: Relevance,
    pub unigram_logprob: f64,
    pub occurrence_count: u64,
    pub doc_ids: Vec<usize>,
}

/// A retrieved training document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentResult {
    pub id: usize,
    pub shard_id: u32,
    pub doc_id: u64,
    pub source: String,
    pub stage: Stage,
    pub doc_tokens: u64,
    pub snippet: String,
    pub snippet_token_range: (u64, u64),
    /// Document-relative position the snippet and extended context centre on.
    pub center: u64,
    /// Document-relative start positions of the matched occurrences.
    pub match_positions: Vec<u64>,
    pub relevance: Relevance,
    pub bm25_raw: f64,
    pub bm25_normalized: f64,
    pub span_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub span_id: usize,
    pub document_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceStats {
    pub response_tokens: usize,
    pub span_candidates: usize,
    pub spans_kept: usize,
    /// Kept spans whose every enclosing document is taken down.
    pub spans_dropped_takedown: usize,
    pub documents: usize,
    pub finds: u64,
    pub probe_count: u64,
    pub disk_reads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceResult {
    /// Sorted by begin, pairwise disjoint.
    pub spans: Vec<SpanResult>,
    /// Sorted by `bm25_raw` descending, ties by (shard, doc).
    pub documents: Vec<DocumentResult>,
    /// Sorted by (span, document).
    pub adjacency: Vec<Edge>,
    pub stats: TraceStats,
    /// Wall-clock time of the trace; serialized only through `stats`.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl TraceResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace results always serialize")
    }
}
