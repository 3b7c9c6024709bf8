//! Terminal rendering of a trace: the response with marked spans, then the
//! ranked documents.

use std::io::{self, Write};

use tracescope_core::{Relevance, TraceResult};

const TOP_DOCUMENTS: usize = 10;
const SNIPPET_CHARS: usize = 160;

fn markers(r: Relevance) -> (&'static str, &'static str) {
    match r {
        Relevance::High => ("[[", "]]"),
        Relevance::Medium => ("{{", "}}"),
        Relevance::Low => ("((", "))"),
    }
}

fn label(r: Relevance) -> &'static str {
    match r {
        Relevance::High => "high",
        Relevance::Medium => "medium",
        Relevance::Low => "low",
    }
}

/// Wraps each span of `response` in its relevance markers.
pub fn mark_spans(response: &str, result: &TraceResult) -> String {
    let chars: Vec<char> = response.chars().collect();
    let mut out = String::with_capacity(response.len() + result.spans.len() * 4);
    let mut at = 0;
    for span in &result.spans {
        let (open, close) = markers(span.relevance);
        out.extend(&chars[at..span.char_begin]);
        out.push_str(open);
        out.extend(&chars[span.char_begin..span.char_end]);
        out.push_str(close);
        at = span.char_end;
    }
    out.extend(&chars[at..]);
    out
}

fn one_line(text: &str) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= SNIPPET_CHARS {
        return flat;
    }
    let mut cut: String = flat.chars().take(SNIPPET_CHARS).collect();
    cut.push_str("...");
    cut
}

pub fn pretty(out: &mut impl Write, response: &str, result: &TraceResult) -> io::Result<()> {
    writeln!(out, "{}", mark_spans(response, result))?;
    writeln!(out)?;
    writeln!(out, "markers: [[high]] {{{{medium}}}} ((low))")?;
    let s = &result.stats;
    writeln!(
        out,
        "{} spans from {} candidates over {} response tokens, {} documents",
        s.spans_kept, s.span_candidates, s.response_tokens, s.documents
    )?;
    if s.spans_dropped_takedown > 0 {
        writeln!(out, "{} spans dropped by takedown", s.spans_dropped_takedown)?;
    }
    for doc in result.documents.iter().take(TOP_DOCUMENTS) {
        let spans: Vec<String> = doc.span_ids.iter().map(|i| i.to_string()).collect();
        writeln!(out)?;
        writeln!(
            out,
            "#{} {} {}:{} {} bm25={:.3} norm={:.3} spans=[{}]",
            doc.id,
            label(doc.relevance),
            doc.shard_id,
            doc.doc_id,
            doc.source,
            doc.bm25_raw,
            doc.bm25_normalized,
            spans.join(",")
        )?;
        writeln!(out, "    {}", one_line(&doc.snippet))?;
    }
    if result.documents.len() > TOP_DOCUMENTS {
        writeln!(out, "\n... {} more documents", result.documents.len() - TOP_DOCUMENTS)?;
    }
    Ok(())
}
