use std::collections::BTreeMap;

use crate::index::DocumentSnippet;
use crate::pipeline::retrieve::RawHit;
use crate::pipeline::spans::Span;

/// A union of overlapping kept spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedSpan {
    pub span: Span,
    /// Indices of the kept spans folded into this one.
    pub members: Vec<usize>,
}

/// Unions spans that share at least one token; merely adjacent spans stay
/// separate. Input must be sorted by begin.
pub fn merge_spans(spans: &[Span]) -> Vec<MergedSpan> {
    let mut out: Vec<MergedSpan> = Vec::new();
    for (i, &s) in spans.iter().enumerate() {
        match out.last_mut() {
            Some(last) if s.begin < last.span.end => {
                last.span.end = last.span.end.max(s.end);
                last.members.push(i);
            }
            _ => out.push(MergedSpan {
                span: s,
                members: vec![i],
            }),
        }
    }
    out
}

/// All snippets retrieved from one document.
#[derive(Debug, Clone)]
pub struct MergedDocument {
    pub shard_id: u32,
    pub doc_id: u64,
    /// Merged-span indices this document encloses, ascending.
    pub span_ids: Vec<usize>,
    /// Document-relative start positions of every matched occurrence.
    pub match_positions: Vec<u64>,
    /// Snippet of the earliest matched occurrence.
    pub snippet: DocumentSnippet,
}

impl MergedDocument {
    pub fn earliest_center(&self) -> u64 {
        self.snippet.center
    }
}

/// Groups hits by document. `span_group` maps a kept-span index to its merged
/// span. Output is ordered by (shard, doc).
pub fn merge_documents(hits: Vec<RawHit>, span_group: &[usize]) -> Vec<MergedDocument> {
    let mut by_doc: BTreeMap<(u32, u64), MergedDocument> = BTreeMap::new();
    for hit in hits {
        let group = span_group[hit.span_index];
        match by_doc.get_mut(&(hit.shard_id, hit.doc_id)) {
            Some(doc) => {
                let earliest = doc.match_positions.iter().copied().min().unwrap_or(u64::MAX);
                doc.span_ids.push(group);
                doc.match_positions.push(hit.match_position);
                if hit.match_position < earliest {
                    doc.snippet = hit.snippet;
                }
            }
            None => {
                by_doc.insert(
                    (hit.shard_id, hit.doc_id),
                    MergedDocument {
                        shard_id: hit.shard_id,
                        doc_id: hit.doc_id,
                        span_ids: vec![group],
                        match_positions: vec![hit.match_position],
                        snippet: hit.snippet,
                    },
                );
            }
        }
    }
    by_doc
        .into_values()
        .map(|mut d| {
            d.span_ids.sort_unstable();
            d.span_ids.dedup();
            d.match_positions.sort_unstable();
            d.match_positions.dedup();
            d
        })
        .collect()
}
