//! Monolingual and parallel corpora held as token-id sequences.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Result, XlmError};
use crate::subword::{BpeCodec, MergeTable, TokenId, Vocabulary};

pub type LanguageId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageEntry {
    pub id: LanguageId,
    pub name: String,
    pub sentences: usize,
}

/// Registered languages with their corpus sizes. Ids are dense from 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageSet {
    entries: Vec<LanguageEntry>,
}

impl LanguageSet {
    pub fn new<S: Into<String>>(langs: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (id, (name, n)) in langs.into_iter().enumerate() {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(XlmError::InvalidArgument(format!(
                    "duplicate language {name}"
                )));
            }
            if n == 0 {
                return Err(XlmError::InvalidArgument(format!(
                    "language {name} has an empty corpus"
                )));
            }
            entries.push(LanguageEntry {
                id,
                name,
                sentences: n,
            });
        }
        if entries.is_empty() {
            return Err(XlmError::Empty("no languages".into()));
        }
        Ok(LanguageSet { entries })
    }

    pub fn from_stores(names: &[&str], stores: &[SentenceStore]) -> Result<Self> {
        Self::new(names.iter().zip(stores).map(|(n, s)| (*n, s.len())))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LanguageEntry] {
        &self.entries
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.sentences).collect()
    }

    pub fn name(&self, id: LanguageId) -> Option<&str> {
        self.entries.get(id).map(|e| e.name.as_str())
    }

    pub fn id(&self, name: &str) -> Option<LanguageId> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// Sentences of one language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceStore {
    language: LanguageId,
    sentences: Vec<Vec<TokenId>>,
    total_tokens: usize,
}

impl SentenceStore {
    pub fn new(language: LanguageId, sentences: Vec<Vec<TokenId>>) -> Result<Self> {
        if let Some(i) = sentences.iter().position(Vec::is_empty) {
            return Err(XlmError::InvalidArgument(format!("sentence {i} is empty")));
        }
        let total_tokens = sentences.iter().map(Vec::len).sum();
        Ok(SentenceStore {
            language,
            sentences,
            total_tokens,
        })
    }

    pub fn language(&self) -> LanguageId {
        self.language
    }

    pub fn sentences(&self) -> &[Vec<TokenId>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn max_id(&self) -> Option<TokenId> {
        self.sentences.iter().flatten().copied().max()
    }

    /// Split off the last `n` sentences, e.g. as a held-out set.
    pub fn split_tail(mut self, n: usize) -> Result<(SentenceStore, SentenceStore)> {
        let keep = self.sentences.len().saturating_sub(n);
        let tail = self.sentences.split_off(keep);
        Ok((
            SentenceStore::new(self.language, self.sentences)?,
            SentenceStore::new(self.language, tail)?,
        ))
    }

    /// Little-endian dump: language, sentence count, then (len, ids...) per
    /// sentence, all as u32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * (self.total_tokens + self.sentences.len()));
        out.extend((self.language as u32).to_le_bytes());
        out.extend((self.sentences.len() as u32).to_le_bytes());
        for s in &self.sentences {
            out.extend((s.len() as u32).to_le_bytes());
            for &t in s {
                out.extend(t.to_le_bytes());
            }
        }
        out
    }
}

/// Line-aligned translation pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelStore {
    source_language: LanguageId,
    target_language: LanguageId,
    pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

impl ParallelStore {
    pub fn new(
        source_language: LanguageId,
        target_language: LanguageId,
        pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
    ) -> Result<Self> {
        if let Some(i) = pairs.iter().position(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(XlmError::InvalidArgument(format!("pair {i} has an empty side")));
        }
        Ok(ParallelStore {
            source_language,
            target_language,
            pairs,
        })
    }

    pub fn source_language(&self) -> LanguageId {
        self.source_language
    }

    pub fn target_language(&self) -> LanguageId {
        self.target_language
    }

    pub fn pairs(&self) -> &[(Vec<TokenId>, Vec<TokenId>)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| XlmError::io(path, e))?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| XlmError::InvalidUtf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        lines.push(line.to_string());
    }
    // A trailing newline does not start another line.
    if bytes.ends_with(b"\n") || bytes.is_empty() {
        lines.pop();
    }
    Ok(lines)
}

/// Read one sentence per line and BPE-encode it; blank lines are skipped.
pub fn load_monolingual(
    path: &Path,
    language: LanguageId,
    vocab: &Vocabulary,
    merges: &MergeTable,
) -> Result<SentenceStore> {
    let mut codec = BpeCodec::new(merges);
    load_monolingual_with(path, language, |l| codec.encode(l, vocab))
}

/// [`load_monolingual`] with an arbitrary sentence encoder.
pub fn load_monolingual_with(
    path: &Path,
    language: LanguageId,
    mut encode: impl FnMut(&str) -> Vec<TokenId>,
) -> Result<SentenceStore> {
    let sentences = read_lines(path)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| encode(l))
        .collect();
    SentenceStore::new(language, sentences)
}

/// Result of [`load_parallel`].
#[derive(Clone, Debug)]
pub struct ParallelLoad {
    pub store: ParallelStore,
    pub dropped: usize,
}

/// Pair line `i` of `src_path` with line `i` of `tgt_path`. Pairs with an
/// empty side are dropped and counted.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: LanguageId,
    tgt_lang: LanguageId,
    vocab: &Vocabulary,
    merges: &MergeTable,
) -> Result<ParallelLoad> {
    let mut codec = BpeCodec::new(merges);
    load_parallel_with(src_path, tgt_path, src_lang, tgt_lang, |l| codec.encode(l, vocab))
}

/// [`load_parallel`] with an arbitrary sentence encoder.
pub fn load_parallel_with(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: LanguageId,
    tgt_lang: LanguageId,
    mut encode: impl FnMut(&str) -> Vec<TokenId>,
) -> Result<ParallelLoad> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(XlmError::LineCountMismatch(src.len(), tgt.len()));
    }
    let mut pairs = Vec::with_capacity(src.len());
    let mut dropped = 0;
    for (s, t) in src.iter().zip(&tgt) {
        let s = encode(s);
        let t = encode(t);
        if s.is_empty() || t.is_empty() {
            dropped += 1;
        } else {
            pairs.push((s, t));
        }
    }
    Ok(ParallelLoad {
        store: ParallelStore::new(src_lang, tgt_lang, pairs)?,
        dropped,
    })
}

/// Exact token occurrence counts; ids never seen count 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        FrequencyTable { counts }
    }

    pub fn get(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn add(&mut self, id: TokenId, n: u64) {
        let i = id as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += n;
    }
}

pub fn token_frequencies(stores: &[&SentenceStore]) -> FrequencyTable {
    let mut table = FrequencyTable::default();
    for store in stores {
        for &t in store.sentences().iter().flatten() {
            table.add(t, 1);
        }
    }
    table
}
