//! Aggregate statistics over saved trace results.

use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use tracescope_core::{Relevance, TraceResult};

/// Lengths above this share the last histogram row.
const HISTOGRAM_MAX: usize = 30;
const BAR_WIDTH: usize = 40;

/// Reads every `*.json` file in `dir`, in file-name order.
pub fn load_traces(dir: &Path) -> Result<Vec<TraceResult>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("{} is not a trace result", p.display()))
        })
        .collect()
}

#[derive(Debug, Default, PartialEq)]
pub struct Summary {
    pub traces: usize,
    pub span_lengths: Vec<usize>,
    /// Counts indexed low, medium, high.
    pub span_buckets: [usize; 3],
    pub doc_buckets: [usize; 3],
}

fn slot(r: Relevance) -> usize {
    match r {
        Relevance::Low => 0,
        Relevance::Medium => 1,
        Relevance::High => 2,
    }
}

impl Summary {
    pub fn from_traces(traces: &[TraceResult]) -> Self {
        let mut s = Summary {
            traces: traces.len(),
            ..Summary::default()
        };
        for t in traces {
            for span in &t.spans {
                s.span_lengths.push(span.end - span.begin);
                s.span_buckets[slot(span.relevance)] += 1;
            }
            for doc in &t.documents {
                s.doc_buckets[slot(doc.relevance)] += 1;
            }
        }
        s.span_lengths.sort_unstable();
        s
    }

    pub fn mean(&self) -> Option<f64> {
        if self.span_lengths.is_empty() {
            return None;
        }
        Some(self.span_lengths.iter().sum::<usize>() as f64 / self.span_lengths.len() as f64)
    }

    pub fn median(&self) -> Option<f64> {
        let v = &self.span_lengths;
        let n = v.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(v[n / 2] as f64),
            _ => Some((v[n / 2 - 1] + v[n / 2]) as f64 / 2.0),
        }
    }

    pub fn write(&self, out: &mut impl Write) -> io::Result<()> {
        let spans = self.span_lengths.len();
        let docs: usize = self.doc_buckets.iter().sum();
        writeln!(out, "traces: {}", self.traces)?;
        writeln!(out, "spans: {spans}")?;
        writeln!(out, "documents: {docs}")?;
        match (self.mean(), self.median()) {
            (Some(mean), Some(median)) => writeln!(out, "span length: mean {mean:.1}, median {median}")?,
            _ => writeln!(out, "span length: mean -, median -")?,
        }

        writeln!(out, "span length histogram:")?;
        let mut rows = vec![0usize; HISTOGRAM_MAX + 1];
        for &len in &self.span_lengths {
            rows[len.min(HISTOGRAM_MAX)] += 1;
        }
        let peak = rows.iter().copied().max().unwrap_or(0).max(1);
        for (len, &count) in rows.iter().enumerate().skip(1) {
            if count == 0 {
                continue;
            }
            let bar = "#".repeat((count * BAR_WIDTH).div_ceil(peak));
            let label = if len == HISTOGRAM_MAX { format!("{len}+") } else { len.to_string() };
            writeln!(out, "  {label:>4} {count:>7} {bar}")?;
        }

        for (name, buckets, total) in [("spans", self.span_buckets, spans), ("documents", self.doc_buckets, docs)] {
            let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
            writeln!(
                out,
                "{name} relevance: high {:.3}, medium {:.3}, low {:.3}",
                frac(buckets[2]),
                frac(buckets[1]),
                frac(buckets[0])
            )?;
        }
        Ok(())
    }
}
