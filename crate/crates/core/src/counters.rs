use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use serde::{Deserialize, Serialize};

/// Query instrumentation. A probe is one suffix comparison during binary
/// search and is charged two disk reads: the suffix-array entry and the
/// token run it points at.
#[derive(Debug, Default)]
pub struct ProbeCounters {
    finds: AtomicU64,
    probes: AtomicU64,
    disk_reads: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub finds: u64,
    pub probes: u64,
    pub disk_reads: u64,
}

impl ProbeCounters {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub(crate) fn record_find(&self) {
        self.finds.fetch_add(1, Relaxed);
    }

    #[inline]
    pub(crate) fn record_probe(&self) {
        self.probes.fetch_add(1, Relaxed);
        self.disk_reads.fetch_add(2, Relaxed);
    }

    #[inline]
    pub(crate) fn record_neighbour_read(&self) {
        self.disk_reads.fetch_add(2, Relaxed);
    }

    pub fn snapshot(&self) -> ProbeStats {
        ProbeStats {
            finds: self.finds.load(Relaxed),
            probes: self.probes.load(Relaxed),
            disk_reads: self.disk_reads.load(Relaxed),
        }
    }

    pub fn add(&self, stats: ProbeStats) {
        self.finds.fetch_add(stats.finds, Relaxed);
        self.probes.fetch_add(stats.probes, Relaxed);
        self.disk_reads.fetch_add(stats.disk_reads, Relaxed);
    }

    pub fn reset(&self) {
        self.finds.store(0, Relaxed);
        self.probes.store(0, Relaxed);
        self.disk_reads.store(0, Relaxed);
    }
}
