mod common;

use std::sync::Arc;

use common::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use tempfile::TempDir;
use tracescope_core::{Index, Relevance, TraceConfig, Tracer};

const DOCS: &[&str] = &[
    "Seattle is home to the Space Needle, an observation tower built for the 1962 World's Fair",
    "the tower in the morning we climbed was crowded with tourists and gulls",
    "then in the morning we walked along the quiet harbour and watched ferries leave",
    "quantum chromodynamics describes the strong interaction between quarks and gluons",
    "then in the morning we baked sourdough bread with rye flour and sea salt",
    "glaciers carved the fjords over thousands of years leaving steep granite walls",
    "then in the morning we repaired the old bicycle chain with borrowed pliers",
    "the orchestra rehearsed the second movement twice before the evening concert",
    "then in the morning we planted tomatoes beside the greenhouse fence",
    "volcanic soils are rich in minerals that vineyards prize for their wines",
    "then in the morning we sailed past the lighthouse toward the northern islands",
    "then in the morning we painted the attic ceiling a pale shade of blue",
    "then in the morning we hiked to the ridge where marmots whistled at us",
    "then in the morning we sorted old letters found beneath the floorboards",
    "then in the morning we tuned the piano before the recital began",
    "then in the morning we fed the goats and mended the pasture gate",
];

fn fixture() -> (TempDir, Tracer) {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("idx");
    build_text_index(&root, DOCS, 10_000);
    let index = Arc::new(Index::open(&root).unwrap());
    (dir, Tracer::new(index, 2).unwrap())
}

#[test]
fn disjoint_response_is_empty() {
    let (_d, tracer) = fixture();
    let r = tracer.trace("", "zebra xylophone", &TraceConfig::default()).unwrap();
    assert!(r.spans.is_empty() && r.documents.is_empty() && r.adjacency.is_empty());
    assert_eq!(r.stats.span_candidates, 0);
    assert_eq!(r.stats.response_tokens, 2);
}

#[test]
fn empty_response_is_rejected() {
    let (_d, tracer) = fixture();
    assert!(tracer.trace("p", "", &TraceConfig::default()).is_err());
    let bad = TraceConfig {
        max_docs_per_span: 0,
        ..TraceConfig::default()
    };
    assert!(tracer.trace("p", "x", &bad).is_err());
}

#[test]
fn verbatim_copy_of_unique_document() {
    let (_d, tracer) = fixture();
    let response = DOCS[3];
    let r = tracer.trace("", response, &TraceConfig::default()).unwrap();
    check_trace_invariants(&r, &TraceConfig::default());
    assert_eq!(r.spans.len(), 1);
    assert_eq!((r.spans[0].begin, r.spans[0].end), (0, r.stats.response_tokens));
    assert_eq!(r.spans[0].text, response);
    assert_eq!(r.spans[0].occurrence_count, 1);
    assert_eq!(r.documents.len(), 1);
    assert_eq!(r.documents[0].doc_id, 3);
    assert_eq!(r.documents[0].source, "src-3");
    // one retrieved document: every idf is negative, so BM25 cannot rate it
    assert!(r.documents[0].bm25_raw < 0.0);
    assert_eq!(r.documents[0].relevance, Relevance::Low);
}

#[test]
fn copied_document_ranks_high_among_retrieved_set() {
    let (_d, tracer) = fixture();
    // the shared phrase pulls in ten documents; the copied one dominates
    let response = format!("{} in the morning we", DOCS[8]);
    let config = TraceConfig {
        keep_fraction: 1.0,
        ..TraceConfig::default()
    };
    let r = tracer.trace("", &response, &config).unwrap();
    check_trace_invariants(&r, &config);
    assert_eq!(r.documents.len(), 10);
    let top = &r.documents[0];
    assert_eq!(top.doc_id, 8);
    assert_eq!(top.relevance, Relevance::High, "normalized {}", top.bm25_normalized);
    assert!(r.documents[1..].iter().all(|d| d.relevance < Relevance::High));
    assert!(r.spans.iter().any(|s| s.relevance == Relevance::High));
}

#[test]
fn span_text_and_char_offsets_match_response() {
    let (_d, tracer) = fixture();
    let response = "Zürich « and then in the morning we climbed the tower.";
    let r = tracer.trace("prompt", response, &TraceConfig::default()).unwrap();
    assert!(!r.spans.is_empty());
    let chars: Vec<char> = response.chars().collect();
    for s in &r.spans {
        let by_chars: String = chars[s.char_begin..s.char_end].iter().collect();
        assert_eq!(by_chars, s.text);
    }
}

#[test]
fn takedown_removes_span_and_document() {
    let (_d, tracer) = fixture();
    let response = "we saw glaciers carved the fjords over thousands of years";
    let before = tracer.trace("", response, &TraceConfig::default()).unwrap();
    assert_eq!(before.documents.len(), 1);
    assert_eq!(before.documents[0].doc_id, 5);

    tracer.index().take_down(&[(0, 5)]).unwrap();
    let after = tracer.trace("", response, &TraceConfig::default()).unwrap();
    assert!(after.documents.iter().all(|d| d.doc_id != 5));
    assert!(after.spans.iter().all(|s| !s.text.contains("fjords")));
    assert!(after.stats.spans_dropped_takedown >= 1);
    check_trace_invariants(&after, &TraceConfig::default());
}

#[test]
fn identical_calls_serialize_identically() {
    let (_d, tracer) = fixture();
    let response = "in the morning we planted tomatoes and in the morning we baked sourdough bread";
    let config = TraceConfig {
        max_docs_per_span: 2,
        rng_seed: 7,
        ..TraceConfig::default()
    };
    let a = tracer.trace("q", response, &config).unwrap().to_json();
    let b = tracer.trace("q", response, &config).unwrap().to_json();
    assert_eq!(a, b);
    assert!(!a.contains("latency_ms"));

    let timed = TraceConfig {
        include_timing: true,
        ..config
    };
    assert!(tracer.trace("q", response, &timed).unwrap().to_json().contains("latency_ms"));
}

#[test]
fn random_token_traces_hold_invariants() {
    let mut rng = StdRng::seed_from_u64(17);
    let table = vocab64();
    for round in 0..10 {
        let total = rng.random_range(5_000..20_000);
        let docs = random_corpus(&mut rng, total, 64, 800);
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("idx");
        build_token_index(&root, &table, &docs, 1 + total as u64 / 2);
        let tracer = Tracer::new(Arc::new(Index::open(&root).unwrap()), 1).unwrap();
        let resp = planted_response(&mut rng, &docs, 300, 64);
        let config = TraceConfig {
            rng_seed: round,
            max_docs_per_span: 3,
            keep_fraction: 0.2,
            ..TraceConfig::default()
        };
        let r = tracer.trace_tokens("", &resp, &config).unwrap();
        check_trace_invariants(&r, &config);
        assert_eq!(r.stats.spans_kept, r.stats.span_candidates.min(60));
        assert!(r.documents.len() <= r.stats.spans_kept * 3);
        for d in &r.documents {
            let (b, e) = d.snippet_token_range;
            assert!(e - b == 80 || (b == 0 && e == d.doc_tokens));
        }
    }
}
