//! Query-time document takedown backed by an append-only journal.
//!
//! Each journal line is `"<shard_id> <doc_id>"`. The journal is replayed when
//! an index is opened; index files are never rewritten.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};

pub const JOURNAL_FILE: &str = "takedown.journal";

pub type DocKey = (u32, u64);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TakedownReport {
    pub applied: usize,
    pub already_present: usize,
    pub unknown: usize,
}

#[derive(Debug)]
pub struct TakedownList {
    journal: PathBuf,
    current: RwLock<Arc<HashSet<DocKey>>>,
    writer: Mutex<()>,
}

impl TakedownList {
    /// Loads the journal at `journal`, or starts empty when it does not exist.
    pub fn open(journal: &Path) -> Result<Self> {
        let mut set = HashSet::new();
        match fs::read_to_string(journal) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    set.insert(parse_line(line).ok_or_else(|| {
                        Error::Format(format!("{}:{}: bad takedown entry {line:?}", journal.display(), i + 1))
                    })?);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(journal, e)),
        }
        Ok(TakedownList {
            journal: journal.to_path_buf(),
            current: RwLock::new(Arc::new(set)),
            writer: Mutex::new(()),
        })
    }

    /// Consistent view of the takedown set; later updates do not affect it.
    pub fn snapshot(&self) -> Arc<HashSet<DocKey>> {
        self.current.read().unwrap().clone()
    }

    pub fn contains(&self, key: DocKey) -> bool {
        self.current.read().unwrap().contains(&key)
    }

    pub fn len(&self) -> usize {
        self.current.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends known, not-yet-present documents to the journal and publishes
    /// the new set. Unknown keys are reported and skipped.
    pub fn apply(
        &self,
        docs: &[DocKey],
        is_known: impl Fn(DocKey) -> bool,
    ) -> Result<(TakedownReport, Vec<DocKey>)> {
        let _guard = self.writer.lock().unwrap();
        let old = self.snapshot();
        let mut report = TakedownReport::default();
        let mut unknown = Vec::new();
        let mut added = Vec::new();
        for &key in docs {
            if !is_known(key) {
                report.unknown += 1;
                unknown.push(key);
            } else if old.contains(&key) || added.contains(&key) {
                report.already_present += 1;
            } else {
                added.push(key);
            }
        }
        if !added.is_empty() {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.journal)
                .map_err(|e| Error::io(&self.journal, e))?;
            let mut lines = String::new();
            for (s, d) in &added {
                lines.push_str(&format!("{s} {d}\n"));
            }
            file.write_all(lines.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| Error::io(&self.journal, e))?;

            let mut next = (*old).clone();
            next.extend(added.iter().copied());
            *self.current.write().unwrap() = Arc::new(next);
            report.applied = added.len();
        }
        Ok((report, unknown))
    }
}

fn parse_line(line: &str) -> Option<DocKey> {
    let mut it = line.split_whitespace();
    let shard = it.next()?.parse().ok()?;
    let doc = it.next()?.parse().ok()?;
    it.next().is_none().then_some((shard, doc))
}
