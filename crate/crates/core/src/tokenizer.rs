//! Token vocabularies, the default word/punctuation tokenizer, and the
//! `tokenizer.json` sidecar every index carries.
//!
//! The engine only ever needs three facts about a token: its decoded text,
//! whether it opens a new word, and whether it is a delimiter (a period or a
//! newline). Those live in a [`TokenClassTable`]. Encoding text is done by the
//! [`DefaultTokenizer`] for indexes built with the built-in rules, or by a
//! greedy longest-match over the sidecar vocabulary for external ones.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const SIDECAR_VERSION: u32 = 1;
pub const SIDECAR_FILE: &str = "tokenizer.json";

/// Per-token classification record, one per vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub id: TokenId,
    pub text: String,
    pub begin_of_word: bool,
    pub delimiter: bool,
}

/// On-disk form of a [`TokenClassTable`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerSidecar {
    pub version: u32,
    pub vocab_size: u32,
    /// `"default"` for vocabularies produced by [`DefaultTokenizer`], anything
    /// else is treated as an external vocabulary.
    #[serde(default = "default_kind")]
    pub kind: String,
    pub tokens: Vec<TokenEntry>,
}

fn default_kind() -> String {
    "external".to_string()
}

/// Immutable mapping from token id to (text, begin-of-word, delimiter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClassTable {
    texts: Vec<String>,
    begin_of_word: Vec<bool>,
    delimiter: Vec<bool>,
    kind: TokenizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Default,
    External,
}

impl TokenClassTable {
    pub fn from_entries(kind: TokenizerKind, mut entries: Vec<TokenEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Tokenizer(format!(
                    "token ids must be dense 0..vocab_size, found gap or duplicate at id {}",
                    e.id
                )));
            }
        }
        let table = TokenClassTable {
            texts: entries.iter().map(|e| e.text.clone()).collect(),
            begin_of_word: entries.iter().map(|e| e.begin_of_word).collect(),
            delimiter: entries.iter().map(|e| e.delimiter).collect(),
            kind,
        };
        if table.vocab_size() as u64 >= u32::MAX as u64 - 1 {
            return Err(Error::Tokenizer("vocabulary too large".into()));
        }
        Ok(table)
    }

    /// Builds a table for the default tokenizer, deriving both flags from the
    /// token text.
    pub fn from_default_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        TokenClassTable {
            begin_of_word: texts.iter().map(|t| default_begin_of_word(t)).collect(),
            delimiter: texts.iter().map(|t| default_delimiter(t)).collect(),
            texts,
            kind: TokenizerKind::Default,
        }
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab_size(&self) -> u32 {
        self.texts.len() as u32
    }

    /// Bytes per stored token id: 2 when every id and the separator fit in
    /// `u16`, else 4.
    pub fn token_width(&self) -> u8 {
        if self.vocab_size() < 65_535 {
            2
        } else {
            4
        }
    }

    /// Reserved document separator id for this table's token width.
    pub fn separator(&self) -> TokenId {
        separator_for_width(self.token_width())
    }

    pub fn text(&self, id: TokenId) -> Result<&str> {
        self.texts
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| self.out_of_range(id))
    }

    /// `(begin_of_word, delimiter)` for a vocabulary token.
    pub fn classify(&self, id: TokenId) -> Result<(bool, bool)> {
        let i = id as usize;
        if i >= self.texts.len() {
            return Err(self.out_of_range(id));
        }
        Ok((self.begin_of_word[i], self.delimiter[i]))
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.text(id)?);
        }
        Ok(out)
    }

    /// Decodes a run of corpus tokens, stopping at the first separator.
    pub fn decode_lossy(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            match self.texts.get(id as usize) {
                Some(t) => out.push_str(t),
                None => break,
            }
        }
        out
    }

    fn out_of_range(&self, id: TokenId) -> Error {
        if id == self.separator() {
            Error::Tokenizer(format!("id {id} is the document separator, not a vocabulary token"))
        } else {
            Error::Tokenizer(format!(
                "token id {id} out of range for vocabulary of size {} (index/tokenizer mismatch?)",
                self.vocab_size()
            ))
        }
    }

    /// Attaches word-boundary and delimiter flags to an already tokenized
    /// sequence. Position 0 and any position following a token whose text
    /// ends in a newline start a word regardless of the token's own flag.
    pub fn annotate(&self, ids: &[TokenId]) -> Result<Encoding> {
        let mut enc = Encoding::default();
        let mut offset = 0usize;
        let mut prev_newline = true;
        for &id in ids {
            let text = self.text(id)?;
            let (bow, delim) = self.classify(id)?;
            enc.ids.push(id);
            enc.offsets.push((offset, offset + text.len()));
            enc.word_start.push(bow || prev_newline);
            enc.delimiter.push(delim);
            offset += text.len();
            prev_newline = text.ends_with('\n');
        }
        Ok(enc)
    }

    pub fn to_sidecar(&self) -> TokenizerSidecar {
        TokenizerSidecar {
            version: SIDECAR_VERSION,
            vocab_size: self.vocab_size(),
            kind: match self.kind {
                TokenizerKind::Default => "default".into(),
                TokenizerKind::External => "external".into(),
            },
            tokens: (0..self.texts.len())
                .map(|i| TokenEntry {
                    id: i as TokenId,
                    text: self.texts[i].clone(),
                    begin_of_word: self.begin_of_word[i],
                    delimiter: self.delimiter[i],
                })
                .collect(),
        }
    }

    pub fn from_sidecar(sidecar: TokenizerSidecar) -> Result<Self> {
        if sidecar.version != SIDECAR_VERSION {
            return Err(Error::Tokenizer(format!(
                "unsupported tokenizer sidecar version {}",
                sidecar.version
            )));
        }
        if sidecar.tokens.len() != sidecar.vocab_size as usize {
            return Err(Error::Tokenizer(format!(
                "sidecar declares vocab_size {} but lists {} tokens",
                sidecar.vocab_size,
                sidecar.tokens.len()
            )));
        }
        let kind = if sidecar.kind == "default" {
            TokenizerKind::Default
        } else {
            TokenizerKind::External
        };
        Self::from_entries(kind, sidecar.tokens)
    }

    /// Serialized sidecar bytes. Stable for a given table.
    pub fn sidecar_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_sidecar()).expect("sidecar serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.sidecar_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.sidecar_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let sidecar: TokenizerSidecar = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_sidecar(sidecar)
    }
}

pub fn separator_for_width(width: u8) -> TokenId {
    if width == 2 {
        u16::MAX as TokenId
    } else {
        u32::MAX
    }
}

fn default_begin_of_word(text: &str) -> bool {
    text.starts_with(' ')
}

fn default_delimiter(text: &str) -> bool {
    text == "." || text.contains('\n')
}

/// A tokenized string: ids plus per-position flags and byte offsets into the
/// source text.
///
/// Ids `>= vocab_size` mark pieces that are not in the vocabulary; they never
/// occur in any corpus, so matching stops at them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    pub offsets: Vec<(usize, usize)>,
    pub word_start: Vec<bool>,
    pub delimiter: Vec<bool>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Byte range in the source text covered by tokens `[begin, end)`.
    pub fn byte_range(&self, begin: usize, end: usize) -> (usize, usize) {
        if begin >= end {
            let at = self.offsets.get(begin).map(|o| o.0).unwrap_or(0);
            return (at, at);
        }
        (self.offsets[begin].0, self.offsets[end - 1].1)
    }
}

/// Splits text into maximal runs of an optional single leading space plus
/// letters/digits; every other character is its own piece.
pub fn default_pieces(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map(|c| c.0).unwrap_or(text.len());
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        let c = chars[i].1;
        if c == ' ' && chars.get(i + 1).is_some_and(|n| n.1.is_alphanumeric()) {
            i += 1;
        }
        if chars[i].1.is_alphanumeric() {
            while i < chars.len() && chars[i].1.is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        pieces.push((end_of(start), end_of(i)));
    }
    pieces
}

/// Vocabulary-free tokenizer whose ids are assigned first-come-first-served
/// while an index is built and frozen into the sidecar afterwards.
#[derive(Debug, Clone, Default)]
pub struct DefaultTokenizer {
    texts: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl DefaultTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_table(table: &TokenClassTable) -> Self {
        let texts = table.texts.clone();
        let ids = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        DefaultTokenizer { texts, ids }
    }

    pub fn vocab_size(&self) -> u32 {
        self.texts.len() as u32
    }

    /// Tokenizes, growing the vocabulary with any unseen piece.
    pub fn encode_growing(&mut self, text: &str) -> Vec<TokenId> {
        default_pieces(text)
            .into_iter()
            .map(|(s, e)| {
                let piece = &text[s..e];
                match self.ids.get(piece) {
                    Some(&id) => id,
                    None => {
                        let id = self.texts.len() as TokenId;
                        self.texts.push(piece.to_string());
                        self.ids.insert(piece.to_string(), id);
                        id
                    }
                }
            })
            .collect()
    }

    /// Tokenizes against the frozen vocabulary. Unknown pieces get the
    /// out-of-vocabulary id `vocab_size`.
    pub fn encode(&self, text: &str) -> Encoding {
        let oov = self.vocab_size();
        let mut enc = Encoding::default();
        let mut prev_newline = true;
        for (s, e) in default_pieces(text) {
            let piece = &text[s..e];
            enc.ids.push(self.ids.get(piece).copied().unwrap_or(oov));
            enc.offsets.push((s, e));
            enc.word_start.push(default_begin_of_word(piece) || prev_newline);
            enc.delimiter.push(default_delimiter(piece));
            prev_newline = piece.ends_with('\n');
        }
        enc
    }

    pub fn table(&self) -> TokenClassTable {
        TokenClassTable::from_default_texts(self.texts.iter().cloned())
    }
}

/// Greedy longest-match encoder over an external vocabulary's decoded texts.
#[derive(Debug, Clone)]
pub struct VocabEncoder {
    table: TokenClassTable,
    by_text: HashMap<String, TokenId>,
    max_len: usize,
}

impl VocabEncoder {
    pub fn new(table: TokenClassTable) -> Self {
        let mut by_text = HashMap::new();
        let mut max_len = 0;
        for (i, t) in table.texts.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            max_len = max_len.max(t.len());
            // lowest id wins for duplicate texts
            by_text.entry(t.clone()).or_insert(i as TokenId);
        }
        VocabEncoder {
            table,
            by_text,
            max_len,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Encoding> {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let mut end = (pos + self.max_len).min(text.len());
            let mut found = None;
            while end > pos {
                if text.is_char_boundary(end) {
                    if let Some(&id) = self.by_text.get(&text[pos..end]) {
                        found = Some((id, end));
                        break;
                    }
                }
                end -= 1;
            }
            match found {
                Some((id, e)) => {
                    ids.push(id);
                    pos = e;
                }
                None => {
                    return Err(Error::Tokenizer(format!(
                        "text at byte {pos} cannot be covered by the vocabulary"
                    )))
                }
            }
        }
        self.table.annotate(&ids)
    }
}

/// Query-time encoder bound to an index's vocabulary.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Default(DefaultTokenizer),
    External(VocabEncoder),
}

impl Tokenizer {
    pub fn for_table(table: &TokenClassTable) -> Self {
        match table.kind() {
            TokenizerKind::Default => Tokenizer::Default(DefaultTokenizer::from_table(table)),
            TokenizerKind::External => Tokenizer::External(VocabEncoder::new(table.clone())),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Encoding> {
        match self {
            Tokenizer::Default(t) => Ok(t.encode(text)),
            Tokenizer::External(v) => v.encode(text),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pieces(text: &str) -> Vec<&str> {
        default_pieces(text).into_iter().map(|(s, e)| &text[s..e]).collect()
    }

    #[test]
    fn empty_text() {
        let tok = DefaultTokenizer::new();
        assert!(tok.encode("").is_empty());
        assert!(pieces("").is_empty());
    }

    #[test]
    fn space_needle() {
        let text = "The space needle.";
        assert_eq!(pieces(text), vec!["The", " space", " needle", "."]);
        let mut tok = DefaultTokenizer::new();
        tok.encode_growing(text);
        let enc = tok.encode(text);
        assert_eq!(enc.word_start, vec![true, true, true, false]);
        assert_eq!(enc.delimiter, vec![false, false, false, true]);

        let table = tok.table();
        let needle = enc.ids[2];
        assert_eq!(table.classify(needle).unwrap(), (true, false));
        assert_eq!(table.classify(enc.ids[3]).unwrap(), (false, true));
    }

    #[test]
    fn newline_is_delimiter_and_starts_next_word() {
        let text = "a\nb";
        assert_eq!(pieces(text), vec!["a", "\n", "b"]);
        let mut tok = DefaultTokenizer::new();
        tok.encode_growing(text);
        let enc = tok.encode(text);
        assert_eq!(enc.delimiter, vec![false, true, false]);
        assert_eq!(enc.word_start, vec![true, false, true]);
    }

    #[test]
    fn odd_whitespace_and_punctuation_round_trip() {
        for text in ["hello world", "a  b", " .x", "tab\there", "  ", "é ü 42!", "x\n\n y"] {
            let mut tok = DefaultTokenizer::new();
            let ids = tok.encode_growing(text);
            assert_eq!(tok.table().decode(&ids).unwrap(), text);
        }
    }

    #[test]
    fn decode_rejects_out_of_range_and_separator() {
        let mut tok = DefaultTokenizer::new();
        tok.encode_growing("hello world");
        let table = tok.table();
        assert_eq!(table.decode(&[]).unwrap(), "");
        assert!(table.decode(&[table.vocab_size()]).is_err());
        assert!(table.classify(table.separator()).is_err());
    }

    #[test]
    fn unknown_piece_maps_to_oov() {
        let mut tok = DefaultTokenizer::new();
        tok.encode_growing("known words");
        let enc = tok.encode("known zebra");
        assert_eq!(enc.ids[1], tok.vocab_size());
        assert!(enc.word_start[1]);
    }

    #[test]
    fn annotate_matches_default_encoder() {
        let text = "First line.\nSecond (line) here.";
        let mut tok = DefaultTokenizer::new();
        let ids = tok.encode_growing(text);
        let table = tok.table();
        let a = table.annotate(&ids).unwrap();
        let b = tok.encode(text);
        assert_eq!(a, b);
    }

    #[test]
    fn sidecar_round_trip_and_width() {
        let mut tok = DefaultTokenizer::new();
        tok.encode_growing("one two three.");
        let table = tok.table();
        assert_eq!(table.token_width(), 2);
        assert_eq!(table.separator(), 65_535);
        let back = TokenClassTable::from_sidecar(table.to_sidecar()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.fingerprint(), table.fingerprint());
    }

    #[test]
    fn external_vocab_greedy_longest_match() {
        let entries = ["▁", "the", " the", " cat", ".", "\n", " ", "c", "a", "t"]
            .iter()
            .enumerate()
            .map(|(i, t)| TokenEntry {
                id: i as TokenId,
                text: t.to_string(),
                begin_of_word: t.starts_with(' '),
                delimiter: *t == "." || t.contains('\n'),
            })
            .collect();
        let table = TokenClassTable::from_entries(TokenizerKind::External, entries).unwrap();
        let enc = VocabEncoder::new(table.clone()).encode("the cat.\ncat").unwrap();
        assert_eq!(table.decode(&enc.ids).unwrap(), "the cat.\ncat");
        assert_eq!(enc.ids[..4], [1, 3, 4, 5]);
        assert!(enc.word_start[4]);
        assert!(VocabEncoder::new(table).encode("dog").is_err());
    }

    #[test]
    fn sidecar_with_gap_rejected() {
        let entries = vec![
            TokenEntry { id: 0, text: "a".into(), begin_of_word: false, delimiter: false },
            TokenEntry { id: 2, text: "b".into(), begin_of_word: false, delimiter: false },
        ];
        assert!(TokenClassTable::from_entries(TokenizerKind::External, entries).is_err());
    }
}
