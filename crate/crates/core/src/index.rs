//! Multi-shard query engine over an index root directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::counters::{ProbeCounters, ProbeStats};
use crate::error::{Error, Result};
use crate::shard::{SaSegment, Shard, Stage};
use crate::takedown::{DocKey, TakedownList, TakedownReport, JOURNAL_FILE};
use crate::tokenizer::{TokenClassTable, TokenId, Tokenizer, SIDECAR_FILE};
use crate::unigram::{compute_unigram_table, UnigramTable};

/// Longest matching prefix across all shards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrefixMatch {
    pub length: usize,
    /// Segments for the full query in shards where it occurs entirely. Empty
    /// when only a proper prefix matched; locating that prefix takes a second
    /// `find`.
    pub segments: Vec<SaSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchRequest {
    pub shard_id: u32,
    /// Token position in the shard's stream.
    pub position: u64,
    pub window: u64,
}

/// A decoded window of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocumentSnippet {
    pub shard_id: u32,
    pub doc_id: u64,
    pub source: String,
    pub stage: Stage,
    /// Document length in tokens, separator excluded.
    pub doc_tokens: u64,
    /// Document-relative half-open token range of the window.
    pub token_range: (u64, u64),
    /// Document-relative position the window was centred on.
    pub center: u64,
    pub text: String,
}

/// Half-open window of `window` tokens around `center` inside a document of
/// `doc_len` tokens, shifted (not shrunk) when it would cross either end.
pub fn window_range(doc_len: u64, center: u64, window: u64) -> (u64, u64) {
    if doc_len <= window {
        return (0, doc_len);
    }
    let begin = center.saturating_sub(window / 2).min(doc_len - window);
    (begin, begin + window)
}

/// Ascending sample of `k` distinct indices from `0..n`, or all of them
/// when `n <= k`.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

pub struct Index {
    root: PathBuf,
    table: TokenClassTable,
    tokenizer: Tokenizer,
    shards: Vec<Shard>,
    unigrams: UnigramTable,
    takedown: TakedownList,
    counters: ProbeCounters,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("root", &self.root)
            .field("shards", &self.shards.len())
            .finish()
    }
}

pub fn shard_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("shard-") && e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    Ok(dirs)
}

impl Index {
    pub fn open(root: &Path) -> Result<Self> {
        let table = TokenClassTable::load(&root.join(SIDECAR_FILE))?;
        let fingerprint = table.fingerprint();
        let dirs = shard_dirs(root)?;
        if dirs.is_empty() {
            return Err(Error::Format(format!("{}: no shards", root.display())));
        }
        let mut shards = Vec::with_capacity(dirs.len());
        for (i, dir) in dirs.iter().enumerate() {
            let shard = Shard::open(dir)?;
            let m = shard.manifest();
            if m.shard_id as usize != i {
                return Err(Error::Format(format!(
                    "{}: shard id {} out of sequence (expected {i})",
                    dir.display(),
                    m.shard_id
                )));
            }
            if m.tokenizer_sha256 != fingerprint || m.vocab_size != table.vocab_size() {
                return Err(Error::TokenizerMismatch(
                    fingerprint.clone(),
                    format!("{} ({})", m.tokenizer_sha256, dir.display()),
                ));
            }
            shards.push(shard);
        }
        let dir_refs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
        let unigrams = compute_unigram_table(&dir_refs)?;
        let takedown = TakedownList::open(&root.join(JOURNAL_FILE))?;
        Ok(Index {
            root: root.to_path_buf(),
            tokenizer: Tokenizer::for_table(&table),
            table,
            shards,
            unigrams,
            takedown,
            counters: ProbeCounters::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn table(&self) -> &TokenClassTable {
        &self.table
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, shard_id: u32) -> Result<&Shard> {
        self.shards
            .get(shard_id as usize)
            .ok_or(Error::UnknownShard(shard_id))
    }

    pub fn unigrams(&self) -> &UnigramTable {
        &self.unigrams
    }

    pub fn num_tokens(&self) -> u64 {
        self.shards.iter().map(Shard::num_tokens).sum()
    }

    pub fn num_docs(&self) -> u64 {
        self.shards.iter().map(Shard::num_docs).sum()
    }

    pub fn counters(&self) -> &ProbeCounters {
        &self.counters
    }

    /// Cumulative instrumentation since the last reset.
    pub fn probe_count(&self) -> ProbeStats {
        self.counters.snapshot()
    }

    pub fn reset_counters(&self) {
        self.counters.reset();
    }

    pub fn find(&self, shard_id: u32, query: &[TokenId]) -> Result<SaSegment> {
        self.shard(shard_id)?.find(query, &self.counters)
    }

    pub fn longest_prefix_len(&self, suffix: &[TokenId]) -> Result<PrefixMatch> {
        self.longest_prefix_len_with(suffix, &self.counters)
    }

    /// Max over shards of the longest matching prefix, one `find` per shard.
    pub fn longest_prefix_len_with(
        &self,
        suffix: &[TokenId],
        counters: &ProbeCounters,
    ) -> Result<PrefixMatch> {
        let mut best = PrefixMatch {
            length: 0,
            segments: Vec::new(),
        };
        for shard in &self.shards {
            let (len, seg) = shard.longest_prefix_len(suffix, counters)?;
            if len > best.length {
                best.length = len;
                best.segments.clear();
            }
            if let Some(seg) = seg {
                best.segments.push(seg);
            }
        }
        Ok(best)
    }

    pub fn takedown_snapshot(&self) -> std::sync::Arc<HashSet<DocKey>> {
        self.takedown.snapshot()
    }

    pub fn is_taken_down(&self, key: DocKey) -> bool {
        self.takedown.contains(key)
    }

    /// Positions in `seg` that do not fall in a taken-down document.
    pub(crate) fn live_positions(
        &self,
        seg: &SaSegment,
        taken_down: &HashSet<DocKey>,
    ) -> Vec<u64> {
        let shard = &self.shards[seg.shard_id as usize];
        let filter = taken_down.iter().any(|k| k.0 == seg.shard_id);
        shard
            .positions(seg)
            .filter(|&p| !filter || !taken_down.contains(&(seg.shard_id, shard.doc_of(p))))
            .collect()
    }

    /// Occurrence positions of `query` in one shard, excluding taken-down
    /// documents. More than `limit` live occurrences are down-sampled
    /// uniformly with `seed`. Positions come back in ascending order.
    pub fn locate_occurrences(
        &self,
        shard_id: u32,
        query: &[TokenId],
        limit: usize,
        seed: u64,
    ) -> Result<Vec<u64>> {
        let seg = self.find(shard_id, query)?;
        if seg.is_empty() {
            return Err(Error::NotFound(shard_id));
        }
        let live = self.live_positions(&seg, &self.takedown.snapshot());
        let mut out: Vec<u64> = sample_indices(live.len(), limit, seed)
            .into_iter()
            .map(|i| live[i])
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    fn snippet(&self, shard: &Shard, doc_id: u64, center: u64, window: u64) -> Result<DocumentSnippet> {
        let (start, end) = shard.doc_range(doc_id).ok_or(Error::DocumentUnavailable {
            shard_id: shard.id(),
            doc_id,
        })?;
        let doc_len = end - start;
        let (b, e) = window_range(doc_len, center.min(doc_len), window);
        let meta = shard.doc_meta(doc_id).expect("metadata checked on open");
        Ok(DocumentSnippet {
            shard_id: shard.id(),
            doc_id,
            source: meta.source.clone(),
            stage: meta.stage,
            doc_tokens: doc_len,
            token_range: (b, e),
            center,
            text: self.table.decode_lossy(&shard.tokens(start + b, start + e)),
        })
    }

    fn fetch_one(&self, req: &FetchRequest, taken_down: &HashSet<DocKey>) -> Result<DocumentSnippet> {
        let shard = self.shard(req.shard_id)?;
        if req.position >= shard.num_tokens() {
            return Err(Error::InvalidInput(format!(
                "position {} out of range for shard {} ({} tokens)",
                req.position,
                req.shard_id,
                shard.num_tokens()
            )));
        }
        if shard.token(req.position) == shard.separator() {
            return Err(Error::InvalidInput(format!(
                "position {} in shard {} is a document separator",
                req.position, req.shard_id
            )));
        }
        let doc_id = shard.doc_of(req.position);
        if taken_down.contains(&(req.shard_id, doc_id)) {
            return Err(Error::DocumentUnavailable {
                shard_id: req.shard_id,
                doc_id,
            });
        }
        let (start, _) = shard.doc_range(doc_id).expect("doc_of returns a valid id");
        self.snippet(shard, doc_id, req.position - start, req.window)
    }

    /// Resolves each request to its enclosing document and a decoded window,
    /// in parallel. Output order follows input order; failures are per entry.
    pub fn fetch_documents(&self, requests: &[FetchRequest]) -> Vec<Result<DocumentSnippet>> {
        self.fetch_documents_with(requests, &self.takedown.snapshot())
    }

    pub(crate) fn fetch_documents_with(
        &self,
        requests: &[FetchRequest],
        taken_down: &HashSet<DocKey>,
    ) -> Vec<Result<DocumentSnippet>> {
        requests
            .par_iter()
            .map(|r| self.fetch_one(r, taken_down))
            .collect()
    }

    /// Window of a document by id, `center` being document-relative.
    pub fn document_view(
        &self,
        shard_id: u32,
        doc_id: u64,
        center: u64,
        window: u64,
    ) -> Result<DocumentSnippet> {
        let shard = self.shard(shard_id)?;
        if doc_id >= shard.num_docs() || self.is_taken_down((shard_id, doc_id)) {
            return Err(Error::DocumentUnavailable { shard_id, doc_id });
        }
        self.snippet(shard, doc_id, center, window)
    }

    pub fn is_known_doc(&self, (shard_id, doc_id): DocKey) -> bool {
        self.shards
            .get(shard_id as usize)
            .is_some_and(|s| doc_id < s.num_docs())
    }

    /// Excludes documents from all later queries. Known documents are applied
    /// even when some entries are unknown; the error then lists the unknown
    /// ones alongside the counts.
    pub fn take_down(&self, docs: &[DocKey]) -> Result<TakedownReport> {
        let (report, unknown) = self.takedown.apply(docs, |k| self.is_known_doc(k))?;
        if unknown.is_empty() {
            Ok(report)
        } else {
            Err(Error::UnknownDocuments { unknown, report })
        }
    }
}
