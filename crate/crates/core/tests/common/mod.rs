//! Shared fixtures and naive reference implementations for integration
//! tests. Nothing here touches the suffix array.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use tracescope_core::builder::{BuildConfig, DocumentRecord, Vocabulary};
use tracescope_core::tokenizer::{TokenClassTable, TokenEntry, TokenizerKind};
use tracescope_core::{ingest, Stage, TokenId};

/// A 64-token vocabulary: words (begin-of-word), continuations, and a few
/// delimiters. Flags are chosen so random streams exercise every
/// boundary rule.
pub fn vocab64() -> TokenClassTable {
    let mut entries = Vec::new();
    for i in 0..64u32 {
        let (text, bow, delim) = match i {
            0..=43 => (format!(" w{i}"), true, false),
            44..=57 => (format!("c{i}"), false, false),
            58 => (".".to_string(), false, true),
            59 => ("\n".to_string(), false, true),
            60 => (" .\n".to_string(), true, true),
            61 => (",".to_string(), false, false),
            62 => ("!".to_string(), false, false),
            _ => (" x".to_string(), true, false),
        };
        entries.push(TokenEntry {
            id: i,
            text,
            begin_of_word: bow,
            delimiter: delim,
        });
    }
    TokenClassTable::from_entries(TokenizerKind::External, entries).unwrap()
}

/// Word-start and delimiter flags of a token sequence, derived from the
/// table the same way a reader of the rules would: position 0 and anything
/// after a token ending in a newline starts a word.
pub fn flags(table: &TokenClassTable, ids: &[TokenId]) -> (Vec<bool>, Vec<bool>) {
    let mut ws = Vec::with_capacity(ids.len());
    let mut dl = Vec::with_capacity(ids.len());
    let mut after_newline = true;
    for &id in ids {
        let (bow, delim) = table.classify(id).unwrap();
        ws.push(bow || after_newline);
        dl.push(delim);
        after_newline = table.text(id).unwrap().ends_with('\n');
    }
    (ws, dl)
}

pub fn random_tokens(rng: &mut impl Rng, len: usize, vocab: u32) -> Vec<TokenId> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// Splits `total` tokens into random documents of 20..=max_doc tokens.
pub fn random_corpus(rng: &mut impl Rng, total: usize, vocab: u32, max_doc: usize) -> Vec<Vec<TokenId>> {
    let mut docs = Vec::new();
    let mut left = total;
    while left > 0 {
        let n = rng.random_range(20..=max_doc).min(left);
        docs.push(random_tokens(rng, n, vocab));
        left -= n;
    }
    docs
}

/// Random tokens with verbatim copies of corpus substrings planted in.
pub fn planted_response(rng: &mut impl Rng, docs: &[Vec<TokenId>], len: usize, vocab: u32) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        if rng.random_bool(0.5) {
            let d = &docs[rng.random_range(0..docs.len())];
            let n = rng.random_range(3..=40).min(d.len());
            let s = rng.random_range(0..=d.len() - n);
            out.extend_from_slice(&d[s..s + n]);
        } else {
            let n = rng.random_range(1..=15);
            out.extend(random_tokens(rng, n, vocab));
        }
    }
    out.truncate(len);
    out
}

pub fn build_token_index(root: &Path, table: &TokenClassTable, docs: &[Vec<TokenId>], shard_cap: u64) {
    ingest(
        root,
        docs.iter()
            .enumerate()
            .map(|(i, d)| DocumentRecord::tokens(format!("doc-{i}"), Stage::Pretraining, d.clone())),
        BuildConfig { shard_cap },
        Vocabulary::Fixed(table.clone()),
    )
    .unwrap();
}

pub fn build_text_index(root: &Path, docs: &[&str], shard_cap: u64) {
    ingest(
        root,
        docs.iter()
            .enumerate()
            .map(|(i, t)| DocumentRecord::text(format!("src-{i}"), Stage::Pretraining, *t)),
        BuildConfig { shard_cap },
        Vocabulary::default_tokenizer(),
    )
    .unwrap();
}

/// Sliding-window occurrence count of `q` across documents.
pub fn naive_count(docs: &[Vec<TokenId>], q: &[TokenId]) -> usize {
    docs.iter()
        .map(|d| if q.len() > d.len() { 0 } else { d.windows(q.len()).filter(|w| *w == q).count() })
        .sum()
}

/// Token -> list of (doc, offset) occurrences. Extending a match one token
/// at a time from this table is a plain scan of the corpus.
pub struct NaiveCorpus<'a> {
    docs: &'a [Vec<TokenId>],
    starts: HashMap<TokenId, Vec<(usize, usize)>>,
}

impl<'a> NaiveCorpus<'a> {
    pub fn new(docs: &'a [Vec<TokenId>]) -> Self {
        let mut starts: HashMap<TokenId, Vec<(usize, usize)>> = HashMap::new();
        for (d, doc) in docs.iter().enumerate() {
            for (i, &t) in doc.iter().enumerate() {
                starts.entry(t).or_default().push((d, i));
            }
        }
        NaiveCorpus { docs, starts }
    }

    /// Longest k such that `q[..k]` occurs inside one document.
    pub fn longest_prefix(&self, q: &[TokenId]) -> usize {
        let Some(first) = q.first() else { return 0 };
        let mut live: Vec<(usize, usize)> = match self.starts.get(first) {
            Some(v) => v.clone(),
            None => return 0,
        };
        let mut k = 1;
        while k < q.len() {
            live.retain(|&(d, i)| self.docs[d].get(i + k) == Some(&q[k]));
            if live.is_empty() {
                break;
            }
            k += 1;
        }
        k
    }
}

/// Brute-force maximal spans: enumerate every `[b, e)` of the response,
/// keep those that occur in the corpus, start at a word, contain no
/// delimiter except as the last token, and end at a word boundary; then
/// keep only spans not contained in another such span.
pub fn oracle_spans(table: &TokenClassTable, corpus: &NaiveCorpus, resp: &[TokenId]) -> Vec<(usize, usize)> {
    let l = resp.len();
    let (ws, dl) = flags(table, resp);
    let mut valid = Vec::new();
    for b in 0..l {
        let m = corpus.longest_prefix(&resp[b..]);
        for e in b + 1..=b + m {
            let starts_word = ws[b];
            let self_contained = !dl[b..e - 1].iter().any(|&x| x);
            let ends_word = e == l || ws[e];
            if starts_word && self_contained && ends_word {
                valid.push((b, e));
            }
        }
    }
    // containment check against the longest valid span from each begin
    let mut max_end = vec![0usize; l];
    for &(b, e) in &valid {
        max_end[b] = max_end[b].max(e);
    }
    let mut out: Vec<(usize, usize)> = valid
        .into_iter()
        .filter(|&(b, e)| max_end[b] == e && (0..b).all(|bp| max_end[bp] < e))
        .collect();
    out.sort();
    out
}

/// Independent Okapi BM25: direct transcription of the formula.
pub fn oracle_bm25(corpus: &[String], query: &str, k1: f64, b: f64, eps: f64) -> Vec<f64> {
    let docs: Vec<Vec<String>> = corpus
        .iter()
        .map(|d| d.to_lowercase().split_whitespace().map(String::from).collect())
        .collect();
    let q: Vec<String> = query.to_lowercase().split_whitespace().map(String::from).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut vocab: Vec<&String> = docs.iter().flatten().collect();
    vocab.sort();
    vocab.dedup();
    let df = |t: &str| docs.iter().filter(|d| d.iter().any(|w| w == t)).count() as f64;
    let raw_idf = |t: &str| ((n - df(t) + 0.5) / (df(t) + 0.5)).ln();
    let mean_idf = vocab.iter().map(|t| raw_idf(t)).sum::<f64>() / vocab.len() as f64;
    let idf = |t: &str| {
        if df(t) == 0.0 {
            return 0.0;
        }
        let v = raw_idf(t);
        if v < 0.0 {
            eps * mean_idf
        } else {
            v
        }
    };
    docs.iter()
        .map(|d| {
            let dlen = d.len() as f64;
            q.iter()
                .map(|t| {
                    let f = d.iter().filter(|w| *w == t).count() as f64;
                    idf(t) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dlen / avgdl))
                })
                .sum()
        })
        .collect()
}

/// SHA-256 of every file under `dir`, sorted by path.
pub fn checksums(dir: &Path) -> Vec<(String, String)> {
    use sha2::{Digest, Sha256};
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.display().to_string(), hex::encode(Sha256::digest(&bytes))));
            }
        }
    }
    out.sort();
    out
}

/// Structural invariants every trace result must satisfy.
pub fn check_trace_invariants(r: &tracescope_core::TraceResult, config: &tracescope_core::TraceConfig) {
    use tracescope_core::pipeline::rank::bucket;
    for w in r.spans.windows(2) {
        assert!(w[0].end <= w[1].begin, "spans overlap or unsorted");
    }
    for (i, s) in r.spans.iter().enumerate() {
        assert_eq!(s.id, i);
        assert!(s.begin < s.end);
        assert!(s.unigram_logprob <= 0.0);
        assert!(!s.doc_ids.is_empty(), "span {i} without documents");
        let best = s.doc_ids.iter().map(|&d| r.documents[d].relevance).max().unwrap();
        assert_eq!(s.relevance, best);
        for &d in &s.doc_ids {
            assert!(r.documents[d].span_ids.contains(&i));
        }
    }
    for (i, d) in r.documents.iter().enumerate() {
        assert_eq!(d.id, i);
        assert!(!d.span_ids.is_empty());
        assert!(d.span_ids.iter().all(|&s| s < r.spans.len() && r.spans[s].doc_ids.contains(&i)));
        assert_eq!(d.relevance, bucket(d.bm25_normalized, config.high_threshold, config.medium_threshold));
        assert!(d.bm25_normalized >= 0.0 && d.bm25_normalized <= config.normalized_clip);
    }
    for w in r.documents.windows(2) {
        assert!(
            w[0].bm25_raw > w[1].bm25_raw
                || (w[0].bm25_raw == w[1].bm25_raw && (w[0].shard_id, w[0].doc_id) < (w[1].shard_id, w[1].doc_id)),
            "documents not ranked"
        );
    }
    let edges: usize = r.spans.iter().map(|s| s.doc_ids.len()).sum();
    assert_eq!(edges, r.adjacency.len());
    for e in &r.adjacency {
        assert!(r.spans[e.span_id].doc_ids.contains(&e.document_id));
    }
    assert_eq!(r.stats.documents, r.documents.len());
}
