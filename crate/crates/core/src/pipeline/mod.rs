//! The tracing pipeline: maximal matching spans, unigram filter, document
//! retrieval, merging, and BM25 reranking with relevance buckets.

pub mod bm25;
pub mod filter;
pub mod merge;
pub mod rank;
pub mod result;
pub mod retrieve;
pub mod spans;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::counters::ProbeCounters;
use crate::error::{Error, Result};
use crate::index::Index;
use crate::tokenizer::{Encoding, TokenId};

pub use result::{DocumentResult, Edge, SpanResult, TraceResult, TraceStats};
pub use spans::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Low,
    Medium,
    High,
}

/// Which text's character count divides the raw BM25 score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationBase {
    #[default]
    Response,
    PromptAndResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub keep_fraction: f64,
    pub max_docs_per_span: usize,
    pub snippet_window: u64,
    pub extended_window: u64,
    pub high_threshold: f64,
    pub medium_threshold: f64,
    pub normalization_coefficient: f64,
    pub normalization_base: NormalizationBase,
    /// Upper end of the reported normalized-score range.
    pub normalized_clip: f64,
    #[serde(alias = "seed")]
    pub rng_seed: u64,
    /// Report `stats.latency_ms`. Off by default so output is byte-stable.
    pub include_timing: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            keep_fraction: 0.05,
            max_docs_per_span: 10,
            snippet_window: 80,
            extended_window: 500,
            high_threshold: 0.7,
            medium_threshold: 0.5,
            normalization_coefficient: 0.18,
            normalization_base: NormalizationBase::Response,
            normalized_clip: 1.5,
            rng_seed: 0,
            include_timing: false,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad("keep_fraction must be in (0, 1]");
        }
        if self.max_docs_per_span == 0 {
            return bad("max_docs_per_span must be at least 1");
        }
        if self.snippet_window == 0 || self.extended_window == 0 {
            return bad("windows must be positive");
        }
        if !(self.medium_threshold.is_finite()
            && self.high_threshold.is_finite()
            && self.medium_threshold <= self.high_threshold)
        {
            return bad("medium_threshold must not exceed high_threshold");
        }
        if !(self.normalization_coefficient.is_finite() && self.normalization_coefficient > 0.0) {
            return bad("normalization_coefficient must be positive");
        }
        if !(self.normalized_clip.is_finite() && self.normalized_clip > 0.0) {
            return bad("normalized_clip must be positive");
        }
        Ok(())
    }
}

/// Runs traces against a shared index on a dedicated worker pool.
pub struct Tracer {
    index: Arc<Index>,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracer")
            .field("index", &self.index)
            .field("parallelism", &self.pool.current_num_threads())
            .finish()
    }
}

fn char_count(s: &str) -> usize {
    s.chars().count()
}

impl Tracer {
    /// `parallelism` is the width of the per-position query fan-out; 0 picks
    /// the number of CPUs.
    pub fn new(index: Arc<Index>, parallelism: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .thread_name(|i| format!("trace-{i}"))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        Ok(Tracer { index, pool })
    }

    pub fn index(&self) -> &Arc<Index> {
        &self.index
    }

    pub fn trace(&self, prompt: &str, response: &str, config: &TraceConfig) -> Result<TraceResult> {
        if response.is_empty() {
            return Err(Error::InvalidInput("response is empty".into()));
        }
        let enc = self.index.tokenizer().encode(response)?;
        self.trace_encoded(prompt, response, &enc, config)
    }

    /// Traces a response given directly as token ids.
    pub fn trace_tokens(&self, prompt: &str, ids: &[TokenId], config: &TraceConfig) -> Result<TraceResult> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("response is empty".into()));
        }
        let table = self.index.table();
        let response = table.decode(ids)?;
        let enc = table.annotate(ids)?;
        self.trace_encoded(prompt, &response, &enc, config)
    }

    fn trace_encoded(
        &self,
        prompt: &str,
        response: &str,
        enc: &Encoding,
        config: &TraceConfig,
    ) -> Result<TraceResult> {
        config.validate()?;
        let started = Instant::now();
        let counters = ProbeCounters::new();
        let out = self
            .pool
            .install(|| self.run(prompt, response, enc, config, &counters));
        let probes = counters.snapshot();
        self.index.counters().add(probes);
        let mut result = out?;
        result.stats.finds = probes.finds;
        result.stats.probe_count = probes.probes;
        result.stats.disk_reads = probes.disk_reads;
        result.elapsed = started.elapsed();
        if config.include_timing {
            result.stats.latency_ms = Some(result.elapsed.as_secs_f64() * 1e3);
        }
        Ok(result)
    }

    fn run(
        &self,
        prompt: &str,
        response: &str,
        enc: &Encoding,
        config: &TraceConfig,
        counters: &ProbeCounters,
    ) -> Result<TraceResult> {
        let index = &*self.index;
        let l = enc.len();
        let mut stats = TraceStats {
            response_tokens: l,
            ..TraceStats::default()
        };

        // step 1
        let candidates = spans::maximal_matching_spans(enc, index, counters)?;
        stats.span_candidates = candidates.len();
        if candidates.is_empty() {
            return Ok(TraceResult {
                stats,
                ..TraceResult::default()
            });
        }

        // step 2
        let keep = filter::keep_count(l, config.keep_fraction);
        let kept = filter::filter_spans(&candidates, &enc.ids, index.unigrams(), keep)?;
        stats.spans_kept = kept.len();

        // step 3
        let retrieval = retrieve::retrieve_documents(
            index,
            &enc.ids,
            &kept,
            config.max_docs_per_span,
            config.snippet_window,
            config.rng_seed,
            counters,
        )?;

        // step 4
        let kept_spans: Vec<Span> = kept.iter().map(|s| s.span).collect();
        let merged = merge::merge_spans(&kept_spans);
        let mut group_of = vec![0usize; kept.len()];
        for (g, m) in merged.iter().enumerate() {
            for &i in &m.members {
                group_of[i] = g;
            }
        }
        let live_group: Vec<bool> = {
            let mut live = vec![false; merged.len()];
            for h in &retrieval.hits {
                live[group_of[h.span_index]] = true;
            }
            live
        };
        stats.spans_dropped_takedown = kept
            .iter()
            .enumerate()
            .filter(|&(i, _)| retrieval.occurrence_counts[i] == 0)
            .count();
        for (i, s) in kept.iter().enumerate() {
            if retrieval.occurrence_counts[i] == 0 {
                log::info!(
                    "span [{}, {}) dropped: every enclosing document is taken down",
                    s.span.begin,
                    s.span.end
                );
            }
        }
        // renumber surviving merged spans densely
        let mut new_id = vec![usize::MAX; merged.len()];
        let mut next = 0;
        for (g, &live) in live_group.iter().enumerate() {
            if live {
                new_id[g] = next;
                next += 1;
            }
        }
        let span_group: Vec<usize> = group_of.iter().map(|&g| new_id[g]).collect();
        let merged: Vec<&merge::MergedSpan> = merged
            .iter()
            .zip(&live_group)
            .filter_map(|(m, &live)| live.then_some(m))
            .collect();
        let documents = merge::merge_documents(retrieval.hits, &span_group);

        // step 5
        let query = format!("{prompt} {response}");
        let norm_chars = match config.normalization_base {
            NormalizationBase::Response => char_count(response),
            NormalizationBase::PromptAndResponse => char_count(prompt) + char_count(response),
        };
        let ranked = rank::rerank_and_bucket(
            index,
            documents,
            &query,
            &rank::RankParams {
                extended_window: config.extended_window,
                coefficient: config.normalization_coefficient,
                clip: config.normalized_clip,
                high: config.high_threshold,
                medium: config.medium_threshold,
                norm_chars,
            },
            &retrieval.taken_down,
        )?;

        let mut span_docs: Vec<Vec<usize>> = vec![Vec::new(); merged.len()];
        let mut span_rel = vec![Relevance::Low; merged.len()];
        let mut adjacency = Vec::new();
        let documents: Vec<DocumentResult> = ranked
            .into_iter()
            .enumerate()
            .map(|(id, r)| {
                for &s in &r.doc.span_ids {
                    span_docs[s].push(id);
                    span_rel[s] = span_rel[s].max(r.relevance);
                    adjacency.push(Edge {
                        span_id: s,
                        document_id: id,
                    });
                }
                let snip = r.doc.snippet;
                DocumentResult {
                    id,
                    shard_id: r.doc.shard_id,
                    doc_id: r.doc.doc_id,
                    source: snip.source,
                    stage: snip.stage,
                    doc_tokens: snip.doc_tokens,
                    snippet: snip.text,
                    snippet_token_range: snip.token_range,
                    center: snip.center,
                    match_positions: r.doc.match_positions,
                    relevance: r.relevance,
                    bm25_raw: r.bm25_raw,
                    bm25_normalized: r.bm25_normalized,
                    span_ids: r.doc.span_ids,
                }
            })
            .collect();
        adjacency.sort_by_key(|e| (e.span_id, e.document_id));

        let spans = merged
            .iter()
            .enumerate()
            .map(|(id, m)| {
                let s = m.span;
                let log_prob = index
                    .unigrams()
                    .span_log_prob(&enc.ids[s.begin..s.end])
                    .ok_or_else(|| Error::Internal("span token missing from unigram table".into()))?;
                let occurrence_count = m
                    .members
                    .iter()
                    .map(|&i| retrieval.occurrence_counts[i])
                    .max()
                    .unwrap_or(0);
                let (b, e) = enc.byte_range(s.begin, s.end);
                let char_begin = char_count(&response[..b]);
                Ok(SpanResult {
                    id,
                    begin: s.begin,
                    end: s.end,
                    char_begin,
                    char_end: char_begin + char_count(&response[b..e]),
                    text: response[b..e].to_string(),
                    relevance: span_rel[id],
                    unigram_logprob: log_prob,
                    occurrence_count,
                    doc_ids: std::mem::take(&mut span_docs[id]),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        stats.documents = documents.len();
        Ok(TraceResult {
            spans,
            documents,
            adjacency,
            stats,
            elapsed: Default::default(),
        })
    }
}
