use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::shard::{read_unigram, Manifest, UNIGRAM_FILE};
use crate::tokenizer::TokenId;
use std::path::Path;

/// Corpus-wide token counts backing span unigram probabilities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnigramTable {
    counts: Vec<u64>,
    total: u64,
}

impl UnigramTable {
    pub fn from_counts(counts: &BTreeMap<TokenId, u64>) -> Self {
        let mut table = UnigramTable::default();
        table.merge(counts);
        table
    }

    pub fn merge(&mut self, counts: &BTreeMap<TokenId, u64>) {
        for (&id, &c) in counts {
            let i = id as usize;
            if i >= self.counts.len() {
                self.counts.resize(i + 1, 0);
            }
            self.counts[i] += c;
            self.total += c;
        }
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Non-zero counts in id order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as TokenId, c))
    }

    /// Natural-log maximum-likelihood probability of a token, `None` when the
    /// token never occurs.
    pub fn log_prob(&self, id: TokenId) -> Option<f64> {
        let c = self.count(id);
        (c > 0).then(|| (c as f64).ln() - (self.total as f64).ln())
    }

    /// Sum of token log-probabilities over `ids`, summed left to right.
    pub fn span_log_prob(&self, ids: &[TokenId]) -> Option<f64> {
        ids.iter().try_fold(0.0, |acc, &id| Some(acc + self.log_prob(id)?))
    }
}

/// Aggregates per-shard unigram counts. All shards must share a tokenizer.
pub fn compute_unigram_table(shard_dirs: &[&Path]) -> Result<UnigramTable> {
    let mut table = UnigramTable::default();
    let mut fingerprint: Option<String> = None;
    for dir in shard_dirs {
        let manifest = Manifest::load(dir)?;
        match &fingerprint {
            Some(f) if *f != manifest.tokenizer_sha256 => {
                return Err(Error::TokenizerMismatch(f.clone(), manifest.tokenizer_sha256));
            }
            Some(_) => {}
            None => fingerprint = Some(manifest.tokenizer_sha256.clone()),
        }
        table.merge(&read_unigram(&dir.join(UNIGRAM_FILE))?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_and_probabilities() {
        let mut t = UnigramTable::from_counts(&BTreeMap::from([(0, 2), (1, 1)]));
        assert_eq!(t.total(), 3);
        t.merge(&BTreeMap::from([(0, 3)]));
        assert_eq!(t.count(0), 5);
        assert_eq!(t.total(), 6);
        assert_eq!(t.log_prob(7), None);

        let t = UnigramTable::from_counts(&BTreeMap::from([(0, 100), (1, 10), (2, 890)]));
        let p = t.span_log_prob(&[0, 1]).unwrap().exp();
        assert!((p - 1e-3).abs() < 1e-15);
    }
}
