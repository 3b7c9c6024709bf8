use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::pipeline::spans::Span;
use crate::tokenizer::TokenId;
use crate::unigram::UnigramTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSpan {
    pub span: Span,
    /// Sum of natural-log unigram probabilities of the span's tokens.
    pub log_prob: f64,
}

/// Number of spans to keep for a response of `len` tokens:
/// `ceil(fraction * len)`, guarding against float noise such as
/// `0.05 * 60 = 3.0000000000000004`.
pub fn keep_count(len: usize, fraction: f64) -> usize {
    if len == 0 {
        return 0;
    }
    let x = fraction * len as f64;
    ((x - 1e-9).ceil() as usize).max(1)
}

/// Ranking used by the filter: lower probability first, then longer, then
/// leftmost.
pub fn span_order(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    a.log_prob
        .total_cmp(&b.log_prob)
        .then(b.span.len().cmp(&a.span.len()))
        .then(a.span.begin.cmp(&b.span.begin))
}

/// Keeps the `keep` spans with the smallest unigram probability, returned in
/// begin order.
pub fn filter_spans(
    candidates: &[Span],
    ids: &[TokenId],
    unigrams: &UnigramTable,
    keep: usize,
) -> Result<Vec<ScoredSpan>> {
    let mut scored = candidates
        .iter()
        .map(|&span| {
            unigrams
                .span_log_prob(&ids[span.begin..span.end])
                .map(|log_prob| ScoredSpan { span, log_prob })
                .ok_or_else(|| {
                    Error::Internal(format!(
                        "span [{}, {}) has a token absent from the unigram table",
                        span.begin, span.end
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(span_order);
    scored.truncate(keep);
    scored.sort_by_key(|s| s.span);
    Ok(scored)
}
