use std::collections::HashSet;

use rayon::prelude::*;

use crate::counters::ProbeCounters;
use crate::error::Result;
use crate::index::{sample_indices, FetchRequest, Index};
use crate::pipeline::filter::ScoredSpan;
use crate::shard::SaSegment;
use crate::takedown::DocKey;
use crate::tokenizer::TokenId;

/// One sampled occurrence of a kept span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub shard_id: u32,
    /// Token position of the span's first token in the shard stream.
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanOccurrences {
    /// Live (not taken down) occurrences across all shards.
    pub total: u64,
    /// At most `limit` sampled occurrences, ordered by (shard, position).
    pub sampled: Vec<Occurrence>,
}

fn mix_seed(seed: u64, begin: usize, end: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ (begin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (end as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Locates a span in every shard (one `find` each) and samples up to `limit`
/// live occurrences with a seed derived from `seed` and the span bounds.
pub fn span_occurrences(
    index: &Index,
    query: &[TokenId],
    limit: usize,
    seed: u64,
    taken_down: &HashSet<DocKey>,
    counters: &ProbeCounters,
) -> Result<SpanOccurrences> {
    let segments: Vec<SaSegment> = index
        .shards()
        .iter()
        .map(|s| s.find(query, counters))
        .collect::<Result<_>>()?;
    let affected = segments
        .iter()
        .any(|seg| !seg.is_empty() && taken_down.iter().any(|k| k.0 == seg.shard_id));

    let all: Vec<Occurrence> = if affected {
        segments
            .iter()
            .flat_map(|seg| {
                index
                    .live_positions(seg, taken_down)
                    .into_iter()
                    .map(|position| Occurrence {
                        shard_id: seg.shard_id,
                        position,
                    })
            })
            .collect()
    } else {
        let total: u64 = segments.iter().map(SaSegment::count).sum();
        // sample ranks over the concatenated segments without materializing
        let picks = sample_indices(total as usize, limit, seed);
        let mut out = Vec::with_capacity(picks.len());
        let mut base = 0u64;
        let mut segs = segments.iter().peekable();
        for pick in picks {
            let mut pick = pick as u64;
            while let Some(seg) = segs.peek() {
                if pick < base + seg.count() {
                    break;
                }
                base += seg.count();
                segs.next();
            }
            let seg = segs.peek().expect("pick below total");
            pick -= base;
            out.push(Occurrence {
                shard_id: seg.shard_id,
                position: index.shards()[seg.shard_id as usize].sa_entry(seg.lo + pick),
            });
        }
        out.sort_by_key(|o| (o.shard_id, o.position));
        return Ok(SpanOccurrences {
            total,
            sampled: out,
        });
    };
    let mut out: Vec<Occurrence> = sample_indices(all.len(), limit, seed)
        .into_iter()
        .map(|i| all[i].clone())
        .collect();
    out.sort_by_key(|o| (o.shard_id, o.position));
    Ok(SpanOccurrences {
        total: all.len() as u64,
        sampled: out,
    })
}

/// A snippet retrieved for one kept span.
#[derive(Debug, Clone)]
pub struct RawHit {
    /// Index into the kept-span list.
    pub span_index: usize,
    pub shard_id: u32,
    pub doc_id: u64,
    /// Document-relative position of the span's first token.
    pub match_position: u64,
    pub snippet: crate::index::DocumentSnippet,
}

pub struct Retrieval {
    /// Takedown set the retrieval was resolved against.
    pub taken_down: std::sync::Arc<HashSet<DocKey>>,
    pub hits: Vec<RawHit>,
    /// Live occurrence count per kept span.
    pub occurrence_counts: Vec<u64>,
}

/// Samples up to `max_docs_per_span` occurrences per kept span and fetches an
/// `snippet_window`-token snippet around each.
pub fn retrieve_documents(
    index: &Index,
    ids: &[TokenId],
    kept: &[ScoredSpan],
    max_docs_per_span: usize,
    snippet_window: u64,
    seed: u64,
    counters: &ProbeCounters,
) -> Result<Retrieval> {
    let taken_down = index.takedown_snapshot();
    let per_span: Vec<SpanOccurrences> = kept
        .par_iter()
        .map(|s| {
            span_occurrences(
                index,
                &ids[s.span.begin..s.span.end],
                max_docs_per_span,
                mix_seed(seed, s.span.begin, s.span.end),
                &taken_down,
                counters,
            )
        })
        .collect::<Result<_>>()?;

    let mut requests = Vec::new();
    let mut owners = Vec::new();
    for (i, occs) in per_span.iter().enumerate() {
        let half = (kept[i].span.len() / 2) as u64;
        for o in &occs.sampled {
            requests.push(FetchRequest {
                shard_id: o.shard_id,
                position: o.position + half,
                window: snippet_window,
            });
            owners.push((i, o.clone()));
        }
    }
    let snippets = index.fetch_documents_with(&requests, &taken_down);
    let mut hits = Vec::with_capacity(snippets.len());
    for ((span_index, occ), snippet) in owners.into_iter().zip(snippets) {
        let snippet = snippet?;
        let shard = index.shard(occ.shard_id)?;
        let (doc_start, _) = shard.doc_range(snippet.doc_id).expect("valid doc");
        hits.push(RawHit {
            span_index,
            shard_id: occ.shard_id,
            doc_id: snippet.doc_id,
            match_position: occ.position - doc_start,
            snippet,
        });
    }
    Ok(Retrieval {
        taken_down,
        hits,
        occurrence_counts: per_span.iter().map(|o| o.total).collect(),
    })
}
