//! One immutable on-disk index shard and the binary-search queries over it.
//!
//! Layout of a shard directory:
//!
//! ```text
//! manifest.json   written last; its presence marks a complete shard
//! tokens.bin      token ids, little-endian, 2 or 4 bytes each, one separator after each document
//! sa.bin          suffix array, 8-byte little-endian token positions
//! docs.idx        8-byte little-endian start position of each document
//! meta.jsonl      one {doc_id, source, stage} object per document
//! unigram.json    {"<token id>": count} over non-separator tokens
//! ```
//!
//! Token and suffix-array files are memory mapped and read one record at a
//! time on demand; nothing is loaded eagerly except the document table.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::counters::ProbeCounters;
use crate::error::{Error, Result};
use crate::tokenizer::{separator_for_width, TokenId};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOKENS_FILE: &str = "tokens.bin";
pub const SA_FILE: &str = "sa.bin";
pub const DOCS_FILE: &str = "docs.idx";
pub const META_FILE: &str = "meta.jsonl";
pub const UNIGRAM_FILE: &str = "unigram.json";

pub const SA_ENTRY_BYTES: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub shard_id: u32,
    pub token_width_bytes: u8,
    pub num_tokens: u64,
    pub num_docs: u64,
    pub vocab_size: u32,
    pub shard_cap: u64,
    pub tokenizer_sha256: String,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported format version {}",
                path.display(),
                m.version
            )));
        }
        if m.token_width_bytes != 2 && m.token_width_bytes != 4 {
            return Err(Error::Format(format!(
                "{}: token width must be 2 or 4",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn separator(&self) -> TokenId {
        separator_for_width(self.token_width_bytes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Pretraining,
    Midtraining,
    Posttraining,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pretraining" => Ok(Stage::Pretraining),
            "midtraining" => Ok(Stage::Midtraining),
            "posttraining" => Ok(Stage::Posttraining),
            _ => Err(Error::InvalidInput(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub doc_id: u64,
    pub source: String,
    pub stage: Stage,
}

/// Half-open range of suffix-array ranks `[lo, hi)` in one shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SaSegment {
    pub shard_id: u32,
    pub lo: u64,
    pub hi: u64,
}

impl SaSegment {
    pub fn count(&self) -> u64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo == self.hi
    }
}

/// Byte view of a fixed-width little-endian token stream.
#[derive(Clone, Copy)]
pub(crate) struct TokenView<'a> {
    bytes: &'a [u8],
    width: usize,
}

impl<'a> TokenView<'a> {
    pub(crate) fn new(bytes: &'a [u8], width: u8) -> Self {
        TokenView {
            bytes,
            width: width as usize,
        }
    }

    pub(crate) fn len(&self) -> u64 {
        (self.bytes.len() / self.width) as u64
    }

    #[inline]
    pub(crate) fn get(&self, pos: u64) -> TokenId {
        let i = pos as usize * self.width;
        if self.width == 2 {
            u16::from_le_bytes([self.bytes[i], self.bytes[i + 1]]) as TokenId
        } else {
            u32::from_le_bytes(self.bytes[i..i + 4].try_into().unwrap())
        }
    }
}

#[inline]
pub(crate) fn read_u64(bytes: &[u8], index: u64) -> u64 {
    let i = index as usize * 8;
    u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap())
}

fn map_file(path: &Path) -> Result<Mmap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    // SAFETY: index files are immutable once the manifest is written; the
    // engine never writes to them.
    let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        // no readahead: every probe is a random read
        let _ = map.advise(memmap2::Advice::Random);
    }
    Ok(map)
}

pub(crate) fn file_len(path: &Path) -> Result<u64> {
    fs::metadata(path)
        .map(|m| m.len())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn read_meta(path: &Path) -> Result<Vec<DocMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: DocMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(meta);
    }
    Ok(out)
}

pub(crate) fn read_unigram(path: &Path) -> Result<BTreeMap<TokenId, u64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, u64> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<TokenId>()
                .map(|id| (id, v))
                .map_err(|_| Error::Format(format!("{}: bad token id {k:?}", path.display())))
        })
        .collect()
}

/// Compares the corpus suffix at `pos` against `query`, looking only at the
/// first `query.len()` tokens. Returns the ordering of the suffix relative to
/// the query (`Equal` means the suffix starts with the query) and the length
/// of their common prefix.
#[inline]
pub(crate) fn compare_prefix(tokens: TokenView<'_>, pos: u64, query: &[TokenId]) -> (Ordering, usize) {
    let n = tokens.len();
    for (i, &q) in query.iter().enumerate() {
        let p = pos + i as u64;
        if p >= n {
            return (Ordering::Less, i);
        }
        let t = tokens.get(p);
        if t != q {
            return (t.cmp(&q), i);
        }
    }
    (Ordering::Equal, query.len())
}

/// An opened, structurally checked shard.
pub struct Shard {
    dir: PathBuf,
    manifest: Manifest,
    tokens: Mmap,
    sa: Mmap,
    doc_offsets: Vec<u64>,
    meta: Vec<DocMeta>,
}

impl std::fmt::Debug for Shard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shard")
            .field("dir", &self.dir)
            .field("manifest", &self.manifest)
            .finish()
    }
}

impl Shard {
    /// Opens a shard, checking that every file agrees in size with the
    /// manifest. Content invariants are left to [`crate::validate`].
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let width = manifest.token_width_bytes as u64;
        let n = manifest.num_tokens;
        let expect = |file: &str, want: u64| -> Result<()> {
            let path = dir.join(file);
            let got = file_len(&path)?;
            if got != want {
                return Err(Error::Format(format!(
                    "{}: expected {want} bytes from manifest, found {got}",
                    path.display()
                )));
            }
            Ok(())
        };
        expect(TOKENS_FILE, n * width)?;
        expect(SA_FILE, n * SA_ENTRY_BYTES)?;
        expect(DOCS_FILE, manifest.num_docs * 8)?;

        let docs_path = dir.join(DOCS_FILE);
        let docs_bytes = fs::read(&docs_path).map_err(|e| Error::io(&docs_path, e))?;
        let doc_offsets: Vec<u64> = (0..manifest.num_docs).map(|i| read_u64(&docs_bytes, i)).collect();
        if doc_offsets.first() != Some(&0) || doc_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format(format!(
                "{}: document offsets must start at 0 and strictly increase",
                docs_path.display()
            )));
        }
        if doc_offsets.last().is_some_and(|&last| last >= n) {
            return Err(Error::Format(format!(
                "{}: document offset beyond token stream",
                docs_path.display()
            )));
        }
        let meta = read_meta(&dir.join(META_FILE))?;
        if meta.len() as u64 != manifest.num_docs {
            return Err(Error::Format(format!(
                "{}: {} metadata lines for {} documents",
                dir.join(META_FILE).display(),
                meta.len(),
                manifest.num_docs
            )));
        }

        Ok(Shard {
            tokens: map_file(&dir.join(TOKENS_FILE))?,
            sa: map_file(&dir.join(SA_FILE))?,
            dir: dir.to_path_buf(),
            manifest,
            doc_offsets,
            meta,
        })
    }

    pub fn id(&self) -> u32 {
        self.manifest.shard_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_tokens(&self) -> u64 {
        self.manifest.num_tokens
    }

    pub fn num_docs(&self) -> u64 {
        self.manifest.num_docs
    }

    pub fn separator(&self) -> TokenId {
        self.manifest.separator()
    }

    pub(crate) fn view(&self) -> TokenView<'_> {
        TokenView::new(&self.tokens, self.manifest.token_width_bytes)
    }

    pub fn token(&self, pos: u64) -> TokenId {
        self.view().get(pos)
    }

    /// Token ids in `[begin, end)`.
    pub fn tokens(&self, begin: u64, end: u64) -> Vec<TokenId> {
        let view = self.view();
        (begin..end.min(view.len())).map(|p| view.get(p)).collect()
    }

    pub fn sa_entry(&self, rank: u64) -> u64 {
        read_u64(&self.sa, rank)
    }

    pub fn doc_meta(&self, doc_id: u64) -> Option<&DocMeta> {
        self.meta.get(doc_id as usize)
    }

    /// Document containing token position `pos`.
    pub fn doc_of(&self, pos: u64) -> u64 {
        match self.doc_offsets.binary_search(&pos) {
            Ok(i) => i as u64,
            Err(i) => i as u64 - 1,
        }
    }

    /// Token range `[start, end)` of a document, excluding its separator.
    pub fn doc_range(&self, doc_id: u64) -> Option<(u64, u64)> {
        let start = *self.doc_offsets.get(doc_id as usize)?;
        let next = self
            .doc_offsets
            .get(doc_id as usize + 1)
            .copied()
            .unwrap_or(self.manifest.num_tokens);
        Some((start, next - 1))
    }

    fn check_query(&self, query: &[TokenId]) -> Result<()> {
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        if query.contains(&self.separator()) {
            return Err(Error::SeparatorInQuery);
        }
        Ok(())
    }

    /// Segment of suffix-array ranks whose suffixes start with `query`. When
    /// the query is absent the segment is empty and sits at the insertion
    /// point: ranks below `lo` sort before the query, ranks from `lo` on sort
    /// after it.
    pub fn find(&self, query: &[TokenId], counters: &ProbeCounters) -> Result<SaSegment> {
        self.check_query(query)?;
        counters.record_find();
        let view = self.view();
        let n = self.manifest.num_tokens;
        let probe = |rank: u64| {
            counters.record_probe();
            compare_prefix(view, self.sa_entry(rank), query).0
        };

        // lower bound: first rank whose suffix is not below the query
        let (mut lo, mut hi) = (0u64, n);
        let mut found = false;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match probe(mid) {
                Ordering::Less => lo = mid + 1,
                ord => {
                    found |= ord == Ordering::Equal;
                    hi = mid;
                }
            }
        }
        let start = lo;
        if !found {
            return Ok(SaSegment {
                shard_id: self.id(),
                lo: start,
                hi: start,
            });
        }

        // upper bound over the rest: first rank whose suffix sorts after
        let (mut lo, mut hi) = (start + 1, n);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match probe(mid) {
                Ordering::Greater => hi = mid,
                _ => lo = mid + 1,
            }
        }
        Ok(SaSegment {
            shard_id: self.id(),
            lo: start,
            hi: lo,
        })
    }

    /// Length of the longest prefix of `suffix` occurring in this shard,
    /// using a single `find`. Returns the segment too when the whole suffix
    /// occurs.
    pub fn longest_prefix_len(
        &self,
        suffix: &[TokenId],
        counters: &ProbeCounters,
    ) -> Result<(usize, Option<SaSegment>)> {
        let seg = self.find(suffix, counters)?;
        if !seg.is_empty() {
            return Ok((suffix.len(), Some(seg)));
        }
        let n = self.manifest.num_tokens;
        let view = self.view();
        // lexicographic neighbours of the insertion point: ranks p-1 and p
        let mut best = 0;
        for rank in [seg.lo.checked_sub(1), Some(seg.lo)].into_iter().flatten() {
            if rank >= n {
                continue;
            }
            counters.record_neighbour_read();
            let (_, lcp) = compare_prefix(view, self.sa_entry(rank), suffix);
            best = best.max(lcp);
        }
        Ok((best, None))
    }

    /// Token positions for suffix-array ranks `[lo, hi)`.
    pub fn positions(&self, seg: &SaSegment) -> impl Iterator<Item = u64> + '_ {
        (seg.lo..seg.hi).map(move |r| self.sa_entry(r))
    }
}
