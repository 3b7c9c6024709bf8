//! Maximal matching spans: for every word-start position of the response,
//! the longest prefix that occurs in the corpus, trimmed to word and
//! delimiter boundaries, then non-maximal spans are suppressed.

use rayon::prelude::*;
use serde::Serialize;

use crate::counters::ProbeCounters;
use crate::error::Result;
use crate::index::Index;
use crate::tokenizer::Encoding;

/// Half-open token interval `[begin, end)` of the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        Span { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.begin
    }
}

/// Largest end `e <= begin + match_len` such that `[begin, e)` holds no
/// delimiter except possibly as its last token and ends at a word boundary.
pub fn trim_to_boundaries(enc: &Encoding, begin: usize, match_len: usize) -> usize {
    let n = enc.len();
    let mut len = match_len.min(n - begin);
    if let Some(d) = enc.delimiter[begin..begin + len].iter().position(|&x| x) {
        len = len.min(d + 1);
    }
    while len > 0 && begin + len < n && !enc.word_start[begin + len] {
        len -= 1;
    }
    begin + len
}

/// Keeps, in begin order, only spans whose end exceeds every end seen
/// before. Spans must come from distinct begins.
pub fn suppress_non_maximal_spans(mut spans: Vec<Span>) -> Vec<Span> {
    spans.sort();
    let mut max_end = 0;
    let mut kept = Vec::with_capacity(spans.len());
    for s in spans {
        if s.end > max_end {
            max_end = s.end;
            kept.push(s);
        }
    }
    kept
}

/// Runs one longest-prefix query per word-start position (in parallel on
/// the current rayon pool) and returns the maximal spans sorted by begin.
pub fn maximal_matching_spans(
    enc: &Encoding,
    index: &Index,
    counters: &ProbeCounters,
) -> Result<Vec<Span>> {
    let starts: Vec<usize> = (0..enc.len()).filter(|&b| enc.word_start[b]).collect();
    let found: Vec<Option<Span>> = starts
        .par_iter()
        .map(|&b| {
            let m = index.longest_prefix_len_with(&enc.ids[b..], counters)?;
            let end = trim_to_boundaries(enc, b, m.length);
            Ok((end > b).then(|| Span::new(b, end)))
        })
        .collect::<Result<_>>()?;
    Ok(suppress_non_maximal_spans(found.into_iter().flatten().collect()))
}
