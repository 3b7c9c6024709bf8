//! Okapi BM25 over a small in-memory corpus.
//!
//! IDF is `ln(N - n + 0.5) - ln(n + 0.5)`; terms whose IDF comes out
//! negative get `epsilon * average_idf` instead, the average taken over every
//! distinct corpus term. Repeated query terms contribute once per
//! occurrence. Terms are lowercased whitespace-separated words.

use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
        }
    }
}

pub fn bm25_terms(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Okapi {
    params: Bm25Params,
    doc_freqs: Vec<HashMap<String, u32>>,
    doc_len: Vec<f64>,
    avgdl: f64,
    idf: HashMap<String, f64>,
}

impl Bm25Okapi {
    pub fn new(corpus: &[Vec<String>], params: Bm25Params) -> Self {
        let mut doc_freqs = Vec::with_capacity(corpus.len());
        let mut doc_len = Vec::with_capacity(corpus.len());
        // ordered so the IDF average sums in a fixed order
        let mut containing: BTreeMap<String, u32> = BTreeMap::new();
        let mut total_len = 0usize;
        for doc in corpus {
            doc_len.push(doc.len() as f64);
            total_len += doc.len();
            let mut freqs: HashMap<String, u32> = HashMap::new();
            for w in doc {
                *freqs.entry(w.clone()).or_insert(0) += 1;
            }
            for w in freqs.keys() {
                *containing.entry(w.clone()).or_insert(0) += 1;
            }
            doc_freqs.push(freqs);
        }
        let n = corpus.len() as f64;
        let avgdl = if corpus.is_empty() { 0.0 } else { total_len as f64 / n };

        let mut idf = HashMap::with_capacity(containing.len());
        let mut idf_sum = 0.0;
        let mut negative = Vec::new();
        for (w, &df) in &containing {
            let v = (n - df as f64 + 0.5).ln() - (df as f64 + 0.5).ln();
            idf_sum += v;
            if v < 0.0 {
                negative.push(w);
            }
            idf.insert(w.clone(), v);
        }
        if !containing.is_empty() {
            let eps = params.epsilon * idf_sum / containing.len() as f64;
            for w in negative {
                idf.insert(w.clone(), eps);
            }
        }
        Bm25Okapi {
            params,
            doc_freqs,
            doc_len,
            avgdl,
            idf,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(0.0)
    }

    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        let Bm25Params { k1, b, .. } = self.params;
        let mut out = vec![0.0; self.doc_freqs.len()];
        if self.avgdl == 0.0 {
            return out;
        }
        for q in query {
            let idf = self.idf(q);
            for (i, freqs) in self.doc_freqs.iter().enumerate() {
                let f = freqs.get(q).copied().unwrap_or(0) as f64;
                out[i] += idf * (f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * self.doc_len[i] / self.avgdl)));
            }
        }
        out
    }
}
