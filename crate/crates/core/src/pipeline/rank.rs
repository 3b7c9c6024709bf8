use std::collections::HashSet;

use crate::error::Result;
use crate::index::{FetchRequest, Index};
use crate::pipeline::bm25::{bm25_terms, Bm25Okapi, Bm25Params};
use crate::pipeline::merge::MergedDocument;
use crate::pipeline::Relevance;
use crate::takedown::DocKey;

/// `raw / (coefficient * chars)`, clipped to `[0, clip]`.
pub fn normalize(raw: f64, chars: usize, coefficient: f64, clip: f64) -> f64 {
    if chars == 0 {
        return 0.0;
    }
    (raw / (coefficient * chars as f64)).clamp(0.0, clip)
}

pub fn bucket(normalized: f64, high: f64, medium: f64) -> Relevance {
    if normalized >= high {
        Relevance::High
    } else if normalized >= medium {
        Relevance::Medium
    } else {
        Relevance::Low
    }
}

#[derive(Debug, Clone)]
pub struct RankedDocument {
    pub doc: MergedDocument,
    /// Decoded extended context the score was computed over.
    pub context: String,
    pub bm25_raw: f64,
    pub bm25_normalized: f64,
    pub relevance: Relevance,
}

pub struct RankParams {
    pub extended_window: u64,
    pub coefficient: f64,
    pub clip: f64,
    pub high: f64,
    pub medium: f64,
    /// Character count the raw score is divided by (times the coefficient).
    pub norm_chars: usize,
}

/// Scores every document's extended context against `query` with BM25 over
/// the retrieved set, then sorts by raw score descending, ties by
/// (shard, doc).
pub fn rerank_and_bucket(
    index: &Index,
    docs: Vec<MergedDocument>,
    query: &str,
    params: &RankParams,
    taken_down: &HashSet<DocKey>,
) -> Result<Vec<RankedDocument>> {
    let requests = docs
        .iter()
        .map(|d| {
            let shard = index.shard(d.shard_id)?;
            let (start, _) = shard
                .doc_range(d.doc_id)
                .expect("merged documents come from valid hits");
            Ok(FetchRequest {
                shard_id: d.shard_id,
                position: start + d.earliest_center(),
                window: params.extended_window,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let contexts = index
        .fetch_documents_with(&requests, taken_down)
        .into_iter()
        .map(|r| r.map(|s| s.text))
        .collect::<Result<Vec<_>>>()?;

    let corpus: Vec<Vec<String>> = contexts.iter().map(|c| bm25_terms(c)).collect();
    let scores = Bm25Okapi::new(&corpus, Bm25Params::default()).scores(&bm25_terms(query));

    let mut ranked: Vec<RankedDocument> = docs
        .into_iter()
        .zip(contexts)
        .zip(scores)
        .map(|((doc, context), raw)| {
            let normalized = normalize(raw, params.norm_chars, params.coefficient, params.clip);
            RankedDocument {
                doc,
                context,
                bm25_raw: raw,
                bm25_normalized: normalized,
                relevance: bucket(normalized, params.high, params.medium),
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.bm25_raw
            .total_cmp(&a.bm25_raw)
            .then((a.doc.shard_id, a.doc.doc_id).cmp(&(b.doc.shard_id, b.doc.doc_id)))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let n = normalize(150.0, 1000, 0.18, 1.5);
        assert!((n - 150.0 / 180.0).abs() < 1e-12);
        assert_eq!(bucket(n, 0.7, 0.5), Relevance::High);
        assert_eq!(normalize(-3.0, 10, 0.18, 1.5), 0.0);
        assert_eq!(normalize(1e6, 10, 0.18, 1.5), 1.5);
        assert_eq!(normalize(5.0, 0, 0.18, 1.5), 0.0);
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket(0.6, 0.7, 0.5), Relevance::Medium);
        assert_eq!(bucket(0.7, 0.7, 0.5), Relevance::High);
        assert_eq!(bucket(0.5, 0.7, 0.5), Relevance::Medium);
        assert_eq!(bucket(0.7 - 1e-12, 0.7, 0.5), Relevance::Medium);
        assert_eq!(bucket(0.5 - 1e-12, 0.7, 0.5), Relevance::Low);
        assert_eq!(bucket(0.0, 0.7, 0.5), Relevance::Low);
    }
}
