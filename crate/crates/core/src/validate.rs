//! Full invariant check of a shard directory.
//!
//! Missing, unreadable, or record-truncated files are errors. Everything that
//! can be read but is inconsistent is reported as a failed check.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use memmap2::Mmap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::shard::{
    file_len, read_meta, read_u64, read_unigram, Manifest, TokenView, DOCS_FILE, META_FILE,
    SA_ENTRY_BYTES, SA_FILE, TOKENS_FILE, UNIGRAM_FILE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub shard_id: u32,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, result: std::result::Result<(), String>) {
        let (passed, detail) = match result {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

fn map(path: &Path) -> Result<Option<Mmap>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if file.metadata().map_err(|e| Error::io(path, e))?.len() == 0 {
        return Ok(None);
    }
    // SAFETY: read-only mapping of a file we do not modify
    unsafe { Mmap::map(&file) }
        .map(Some)
        .map_err(|e| Error::io(path, e))
}

pub fn validate_shard(dir: &Path) -> Result<ValidationReport> {
    let manifest = Manifest::load(dir)?;
    let width = manifest.token_width_bytes as u64;
    let n = manifest.num_tokens;
    let mut report = ValidationReport {
        shard_id: manifest.shard_id,
        checks: Vec::new(),
    };

    let record_sizes = [
        (TOKENS_FILE, width),
        (SA_FILE, SA_ENTRY_BYTES),
        (DOCS_FILE, 8),
    ];
    let mut lens = Vec::new();
    for (file, rec) in record_sizes {
        let path = dir.join(file);
        let len = file_len(&path)?;
        if len % rec != 0 {
            return Err(Error::Format(format!(
                "{}: truncated ({len} bytes is not a multiple of {rec})",
                path.display()
            )));
        }
        lens.push(len / rec);
    }
    let meta = read_meta(&dir.join(META_FILE))?;
    let unigram = read_unigram(&dir.join(UNIGRAM_FILE))?;

    let sizes_ok = lens[0] == n && lens[1] == n && lens[2] == manifest.num_docs;
    report.push(
        "sizes",
        if sizes_ok {
            Ok(())
        } else {
            Err(format!(
                "manifest says {n} tokens / {} docs; files hold {} tokens, {} SA entries, {} doc offsets",
                manifest.num_docs, lens[0], lens[1], lens[2]
            ))
        },
    );
    report.push(
        "shard_cap",
        if n <= manifest.shard_cap {
            Ok(())
        } else {
            Err(format!("{n} tokens exceeds cap {}", manifest.shard_cap))
        },
    );
    report.push(
        "metadata",
        if meta.len() as u64 == manifest.num_docs
            && meta.iter().enumerate().all(|(i, m)| m.doc_id == i as u64)
        {
            Ok(())
        } else {
            Err(format!("{} metadata lines, ids must be dense 0..{}", meta.len(), manifest.num_docs))
        },
    );
    if !sizes_ok {
        return Ok(report);
    }

    let tokens_map = map(&dir.join(TOKENS_FILE))?;
    let sa_map = map(&dir.join(SA_FILE))?;
    let docs_bytes = fs::read(dir.join(DOCS_FILE)).map_err(|e| Error::io(dir.join(DOCS_FILE), e))?;
    let empty: &[u8] = &[];
    let tokens = TokenView::new(tokens_map.as_deref().unwrap_or(empty), manifest.token_width_bytes);
    let sa_bytes = sa_map.as_deref().unwrap_or(empty);
    let separator = manifest.separator();

    let docs: Vec<u64> = (0..manifest.num_docs).map(|i| read_u64(&docs_bytes, i)).collect();
    report.push("doc_offsets", check_doc_offsets(&docs, n));
    report.push("separators", check_separators(tokens, &docs, separator));
    report.push("token_range", {
        match (0..n)
            .map(|p| tokens.get(p))
            .find(|&t| t != separator && t >= manifest.vocab_size)
        {
            None => Ok(()),
            Some(t) => Err(format!("token id {t} >= vocab size {}", manifest.vocab_size)),
        }
    });
    report.push("unigram", check_unigram(tokens, separator, &unigram, manifest.num_docs));

    let permutation = check_permutation(sa_bytes, n);
    let perm_ok = permutation.is_ok();
    report.push("sa_permutation", permutation);
    report.push(
        "sa_sorted",
        if perm_ok {
            check_sorted(tokens, sa_bytes, n)
        } else {
            Err("skipped: suffix array is not a permutation".into())
        },
    );
    Ok(report)
}

fn check_doc_offsets(docs: &[u64], n: u64) -> std::result::Result<(), String> {
    if docs.first() != Some(&0) {
        return Err("first document offset must be 0".into());
    }
    if let Some(w) = docs.windows(2).find(|w| w[0] >= w[1]) {
        return Err(format!("offsets not strictly increasing at {} >= {}", w[0], w[1]));
    }
    if docs.last().is_some_and(|&l| l >= n) {
        return Err("last document offset beyond token stream".into());
    }
    Ok(())
}

fn check_separators(tokens: TokenView<'_>, docs: &[u64], sep: u32) -> std::result::Result<(), String> {
    let n = tokens.len();
    let mut next_doc = 1;
    for p in 0..n {
        let doc_end = docs.get(next_doc).map(|&d| d - 1).unwrap_or(n - 1);
        let is_sep = tokens.get(p) == sep;
        if p == doc_end {
            if !is_sep {
                return Err(format!("missing separator at position {p}"));
            }
            next_doc += 1;
        } else if is_sep {
            return Err(format!("separator inside document at position {p}"));
        }
    }
    Ok(())
}

fn check_unigram(
    tokens: TokenView<'_>,
    sep: u32,
    stored: &BTreeMap<u32, u64>,
    num_docs: u64,
) -> std::result::Result<(), String> {
    let mut actual: BTreeMap<u32, u64> = BTreeMap::new();
    for p in 0..tokens.len() {
        let t = tokens.get(p);
        if t != sep {
            *actual.entry(t).or_insert(0) += 1;
        }
    }
    let sum: u64 = stored.values().sum();
    if sum != tokens.len() - num_docs {
        return Err(format!(
            "counts sum to {sum}, expected {}",
            tokens.len() - num_docs
        ));
    }
    if &actual != stored {
        return Err("stored counts differ from token stream".into());
    }
    Ok(())
}

fn check_permutation(sa: &[u8], n: u64) -> std::result::Result<(), String> {
    let mut seen = vec![false; n as usize];
    for r in 0..n {
        let p = read_u64(sa, r);
        if p >= n {
            return Err(format!("rank {r} points past the end ({p})"));
        }
        if std::mem::replace(&mut seen[p as usize], true) {
            return Err(format!("position {p} appears twice"));
        }
    }
    Ok(())
}

fn check_sorted(tokens: TokenView<'_>, sa: &[u8], n: u64) -> std::result::Result<(), String> {
    for r in 1..n {
        let (a, b) = (read_u64(sa, r - 1), read_u64(sa, r));
        if compare_suffixes(tokens, a, b) == Ordering::Greater {
            return Err(format!("ranks {} and {r} out of order", r - 1));
        }
    }
    Ok(())
}

/// Full suffix comparison, separators included.
pub(crate) fn compare_suffixes(tokens: TokenView<'_>, mut a: u64, mut b: u64) -> Ordering {
    let n = tokens.len();
    loop {
        match (a < n, b < n) {
            (false, false) => return Ordering::Equal,
            (false, true) => return Ordering::Less,
            (true, false) => return Ordering::Greater,
            _ => {}
        }
        match tokens.get(a).cmp(&tokens.get(b)) {
            Ordering::Equal => {
                a += 1;
                b += 1;
            }
            ord => return ord,
        }
    }
}
