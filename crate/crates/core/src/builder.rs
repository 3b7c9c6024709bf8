//! Writes immutable index shards from a stream of documents.
//!
//! Documents are packed into shards in ingestion order. Token ids are spilled
//! to a temporary file per shard while the (possibly growing) vocabulary is
//! still open; once every document has been seen the vocabulary is frozen,
//! the token width fixed, and each shard's suffix array built and written.
//! The manifest is the last file written for each shard.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::shard::{
    DocMeta, Manifest, Stage, DOCS_FILE, FORMAT_VERSION, MANIFEST_FILE, META_FILE, SA_FILE,
    TOKENS_FILE, UNIGRAM_FILE,
};
use crate::suffix_array;
use crate::tokenizer::{DefaultTokenizer, TokenClassTable, TokenId, VocabEncoder, SIDECAR_FILE};

pub const DEFAULT_SHARD_CAP: u64 = 10_000_000;
pub const MAX_SHARD_CAP: u64 = 500_000_000_000;

const SPILL_FILE: &str = "tokens.spill";
const SPILL_SEPARATOR: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Maximum tokens per shard, separators included.
    pub shard_cap: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            shard_cap: DEFAULT_SHARD_CAP,
        }
    }
}

pub fn shard_dir_name(shard_id: u32) -> String {
    format!("shard-{shard_id:04}")
}

#[derive(Debug, Clone)]
pub enum DocumentContent {
    Text(String),
    Tokens(Vec<TokenId>),
}

/// A document to ingest. Its id is assigned densely per shard on ingestion.
#[derive(Debug, Clone)]
pub struct DocumentRecord {
    pub source: String,
    pub stage: Stage,
    pub content: DocumentContent,
}

impl DocumentRecord {
    pub fn text(source: impl Into<String>, stage: Stage, text: impl Into<String>) -> Self {
        DocumentRecord {
            source: source.into(),
            stage,
            content: DocumentContent::Text(text.into()),
        }
    }

    pub fn tokens(source: impl Into<String>, stage: Stage, ids: Vec<TokenId>) -> Self {
        DocumentRecord {
            source: source.into(),
            stage,
            content: DocumentContent::Tokens(ids),
        }
    }
}

/// Where token ids come from while building.
#[derive(Debug, Clone)]
pub enum Vocabulary {
    /// Default tokenizer; ids assigned first-come-first-served.
    Default(DefaultTokenizer),
    /// A fixed vocabulary supplied through its sidecar.
    Fixed(TokenClassTable),
}

impl Vocabulary {
    pub fn default_tokenizer() -> Self {
        Vocabulary::Default(DefaultTokenizer::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShardSummary {
    pub shard_id: u32,
    pub num_tokens: u64,
    pub num_docs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub shards: Vec<ShardSummary>,
    pub vocab_size: u32,
}

impl BuildSummary {
    pub fn num_docs(&self) -> u64 {
        self.shards.iter().map(|s| s.num_docs).sum()
    }

    pub fn num_tokens(&self) -> u64 {
        self.shards.iter().map(|s| s.num_tokens).sum()
    }
}

struct OpenShard {
    id: u32,
    dir: PathBuf,
    spill: BufWriter<File>,
    num_tokens: u64,
    doc_offsets: Vec<u64>,
    meta: Vec<DocMeta>,
    counts: BTreeMap<TokenId, u64>,
}

pub struct IndexBuilder {
    root: PathBuf,
    config: BuildConfig,
    vocab: Vocabulary,
    encoder: Option<VocabEncoder>,
    current: Option<OpenShard>,
    finished: Vec<OpenShard>,
    docs_seen: u64,
}

impl IndexBuilder {
    pub fn new(root: &Path, config: BuildConfig, vocab: Vocabulary) -> Result<Self> {
        if config.shard_cap < 2 || config.shard_cap > MAX_SHARD_CAP {
            return Err(Error::InvalidInput(format!(
                "shard cap must be in [2, {MAX_SHARD_CAP}], got {}",
                config.shard_cap
            )));
        }
        if root.join(SIDECAR_FILE).exists() {
            return Err(Error::InvalidInput(format!(
                "{} already contains an index",
                root.display()
            )));
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let encoder = match &vocab {
            Vocabulary::Fixed(table) => Some(VocabEncoder::new(table.clone())),
            Vocabulary::Default(_) => None,
        };
        Ok(IndexBuilder {
            root: root.to_path_buf(),
            config,
            vocab,
            encoder,
            current: None,
            finished: Vec::new(),
            docs_seen: 0,
        })
    }

    fn tokenize(&mut self, content: DocumentContent) -> Result<Vec<TokenId>> {
        match (content, &mut self.vocab) {
            (DocumentContent::Text(text), Vocabulary::Default(tok)) => Ok(tok.encode_growing(&text)),
            (DocumentContent::Text(text), Vocabulary::Fixed(_)) => {
                Ok(self.encoder.as_ref().expect("fixed vocab has encoder").encode(&text)?.ids)
            }
            (DocumentContent::Tokens(ids), Vocabulary::Fixed(table)) => {
                if let Some(bad) = ids.iter().find(|&&id| id >= table.vocab_size()) {
                    return Err(Error::InvalidInput(format!(
                        "document {} contains token id {bad} outside the vocabulary",
                        self.docs_seen
                    )));
                }
                Ok(ids)
            }
            (DocumentContent::Tokens(_), Vocabulary::Default(_)) => Err(Error::InvalidInput(
                "pre-tokenized documents need a fixed vocabulary".into(),
            )),
        }
    }

    pub fn add(&mut self, doc: DocumentRecord) -> Result<()> {
        let source = doc.source.clone();
        let ids = self.tokenize(doc.content)?;
        let needed = ids.len() as u64 + 1;
        if needed > self.config.shard_cap {
            return Err(Error::DocumentTooLarge {
                doc_index: self.docs_seen,
                source_name: source,
                tokens: ids.len() as u64,
                cap: self.config.shard_cap,
            });
        }
        let full = self
            .current
            .as_ref()
            .is_some_and(|s| s.num_tokens + needed > self.config.shard_cap);
        if full {
            self.seal_current()?;
        }
        if self.current.is_none() {
            self.current = Some(self.open_shard()?);
        }
        let shard = self.current.as_mut().unwrap();
        let spill_err = |e| Error::io(shard.dir.join(SPILL_FILE), e);
        shard.doc_offsets.push(shard.num_tokens);
        shard.meta.push(DocMeta {
            doc_id: shard.meta.len() as u64,
            source,
            stage: doc.stage,
        });
        let mut buf = Vec::with_capacity(ids.len() * 4 + 4);
        for &id in &ids {
            buf.extend_from_slice(&id.to_le_bytes());
            *shard.counts.entry(id).or_insert(0) += 1;
        }
        buf.extend_from_slice(&SPILL_SEPARATOR.to_le_bytes());
        shard.spill.write_all(&buf).map_err(spill_err)?;
        shard.num_tokens += needed;
        self.docs_seen += 1;
        Ok(())
    }

    fn open_shard(&self) -> Result<OpenShard> {
        let id = self.finished.len() as u32;
        let dir = self.root.join(shard_dir_name(id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let spill_path = dir.join(SPILL_FILE);
        let spill = File::create(&spill_path).map_err(|e| Error::io(&spill_path, e))?;
        Ok(OpenShard {
            id,
            dir,
            spill: BufWriter::new(spill),
            num_tokens: 0,
            doc_offsets: Vec::new(),
            meta: Vec::new(),
            counts: BTreeMap::new(),
        })
    }

    fn seal_current(&mut self) -> Result<()> {
        if let Some(mut shard) = self.current.take() {
            shard
                .spill
                .flush()
                .map_err(|e| Error::io(shard.dir.join(SPILL_FILE), e))?;
            self.finished.push(shard);
        }
        Ok(())
    }

    /// Freezes the vocabulary and writes every shard.
    pub fn finish(mut self) -> Result<BuildSummary> {
        self.seal_current()?;
        if self.finished.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let table = match &self.vocab {
            Vocabulary::Default(tok) => tok.table(),
            Vocabulary::Fixed(table) => table.clone(),
        };
        table.write(&self.root.join(SIDECAR_FILE))?;
        let fingerprint = table.fingerprint();

        let mut shards = Vec::new();
        for shard in self.finished {
            info!("writing shard {} ({} tokens)", shard.id, shard.num_tokens);
            shards.push(write_shard(shard, &table, &fingerprint, self.config.shard_cap)?);
        }
        Ok(BuildSummary {
            shards,
            vocab_size: table.vocab_size(),
        })
    }
}

fn write_shard(
    shard: OpenShard,
    table: &TokenClassTable,
    fingerprint: &str,
    shard_cap: u64,
) -> Result<ShardSummary> {
    let OpenShard {
        id,
        dir,
        spill,
        num_tokens,
        doc_offsets,
        meta,
        counts,
    } = shard;
    drop(spill);
    let spill_path = dir.join(SPILL_FILE);
    let mut raw = Vec::with_capacity(num_tokens as usize * 4);
    File::open(&spill_path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut raw))
        .map_err(|e| Error::io(&spill_path, e))?;
    // the separator becomes the largest symbol for suffix sorting
    let sort_separator = table.vocab_size();
    let mut text: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    drop(raw);
    for t in text.iter_mut() {
        if *t == SPILL_SEPARATOR {
            *t = sort_separator;
        }
    }
    let sa = suffix_array::build(&text, sort_separator);

    let width = table.token_width();
    let separator = table.separator();
    write_with(&dir.join(TOKENS_FILE), |w| {
        for &t in &text {
            let t = if t == sort_separator { separator } else { t };
            if width == 2 {
                w.write_all(&(t as u16).to_le_bytes())?;
            } else {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    })?;
    drop(text);
    write_with(&dir.join(SA_FILE), |w| {
        for &p in &sa {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        Ok(())
    })?;
    drop(sa);
    write_with(&dir.join(DOCS_FILE), |w| {
        for &off in &doc_offsets {
            w.write_all(&off.to_le_bytes())?;
        }
        Ok(())
    })?;
    write_with(&dir.join(META_FILE), |w| {
        for m in &meta {
            serde_json::to_writer(&mut *w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let unigram: BTreeMap<String, u64> = counts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    write_json(&dir.join(UNIGRAM_FILE), &unigram)?;
    fs::remove_file(&spill_path).map_err(|e| Error::io(&spill_path, e))?;

    let manifest = Manifest {
        version: FORMAT_VERSION,
        shard_id: id,
        token_width_bytes: width,
        num_tokens,
        num_docs: doc_offsets.len() as u64,
        vocab_size: table.vocab_size(),
        shard_cap,
        tokenizer_sha256: fingerprint.to_string(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(ShardSummary {
        shard_id: id,
        num_tokens,
        num_docs: manifest.num_docs,
    })
}

fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Builds an index at `root` from `documents`.
pub fn ingest<I>(root: &Path, documents: I, config: BuildConfig, vocab: Vocabulary) -> Result<BuildSummary>
where
    I: IntoIterator<Item = DocumentRecord>,
{
    let mut builder = IndexBuilder::new(root, config, vocab)?;
    for doc in documents {
        builder.add(doc)?;
    }
    builder.finish()
}
