//! Byte pair encoding and the shared vocabulary.
//!
//! Words are split into characters with no end-of-word symbol. After
//! segmentation every non-final sub-word carries the continuation marker
//! `@@`, so `abc` with the single merge `a b` becomes `["ab@@", "c"]`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, XlmError};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
pub const BOS: TokenId = 3;
pub const EOS: TokenId = 4;
pub const NUM_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<unk>", "<mask>", "<s>", "</s>"];
pub const CONTINUATION: &str = "@@";

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIAL
}

/// Ordered list of BPE merges; a merge's rank is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut known: HashSet<String> = HashSet::new();
        for (rank, (left, right)) in merges.iter().enumerate() {
            for side in [left, right] {
                if side.is_empty() {
                    return Err(XlmError::Format {
                        what: "merge table",
                        line: rank + 1,
                        msg: "empty symbol".into(),
                    });
                }
                if side.chars().count() > 1 && !known.contains(side.as_str()) {
                    return Err(XlmError::Format {
                        what: "merge table",
                        line: rank + 1,
                        msg: format!("symbol {side:?} is not produced by an earlier merge"),
                    });
                }
            }
            if ranks.insert((left.clone(), right.clone()), rank).is_some() {
                return Err(XlmError::Format {
                    what: "merge table",
                    line: rank + 1,
                    msg: format!("duplicate merge {left} {right}"),
                });
            }
            known.insert(format!("{left}{right}"));
        }
        Ok(MergeTable { merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    /// Codes file: one `left right` merge per line.
    pub fn to_codes_string(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_codes_str(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(XlmError::Format {
                        what: "codes file",
                        line: i + 1,
                        msg: format!("expected `left right`, got {line:?}"),
                    })
                }
            }
        }
        MergeTable::new(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_codes_string()).map_err(|e| XlmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| XlmError::io(path, e))?;
        Self::from_codes_str(&text)
    }
}

/// Learn `num_merges` BPE merges from whitespace-tokenized sentences.
///
/// Each round merges the most frequent adjacent pair (ties broken by the
/// lexicographically smallest `(left, right)`); learning stops early once
/// no pair occurs at least twice.
pub fn learn_bpe<S: AsRef<str>>(sentences: &[S], num_merges: usize) -> Result<MergeTable> {
    if num_merges == 0 {
        return Err(XlmError::InvalidArgument("num_merges must be >= 1".into()));
    }
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for w in s.as_ref().split_whitespace() {
            *word_counts.entry(w).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(XlmError::Empty("BPE sample has no words".into()));
    }

    let mut interner = Interner::default();
    let mut words: Vec<(Vec<u32>, i64)> = {
        let mut sorted: Vec<_> = word_counts.into_iter().collect();
        sorted.sort_unstable();
        sorted
            .into_iter()
            .map(|(w, c)| {
                let syms = w
                    .chars()
                    .map(|ch| interner.intern(ch.to_string()))
                    .collect();
                (syms, c as i64)
            })
            .collect()
    };

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_insert(0) += c;
            occurs.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut best: Option<((u32, u32), i64)> = None;
        for (&pair, &count) in &pair_counts {
            if count < 2 {
                continue;
            }
            best = match best {
                None => Some((pair, count)),
                Some((bp, bc)) => {
                    let better = count > bc
                        || (count == bc && interner.pair_key(pair) < interner.pair_key(bp));
                    if better {
                        Some((pair, count))
                    } else {
                        Some((bp, bc))
                    }
                }
            };
        }
        let Some((pair, _)) = best else { break };
        let merged_str = format!("{}{}", interner.get(pair.0), interner.get(pair.1));
        merges.push((
            interner.get(pair.0).to_string(),
            interner.get(pair.1).to_string(),
        ));
        let merged = interner.intern(merged_str);

        let mut affected: Vec<usize> = occurs
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            for p in syms.windows(2) {
                let key = (p[0], p[1]);
                if let Some(v) = pair_counts.get_mut(&key) {
                    *v -= *c;
                    if *v <= 0 {
                        pair_counts.remove(&key);
                    }
                }
                if let Some(set) = occurs.get_mut(&key) {
                    set.remove(&wi);
                }
            }
            *syms = merge_pair(syms, pair, merged);
            for p in syms.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_insert(0) += *c;
                occurs.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
        occurs.remove(&pair);
        pair_counts.remove(&pair);
    }
    MergeTable::new(merges)
}

fn merge_pair(syms: &[u32], pair: (u32, u32), merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[derive(Default)]
struct Interner {
    strings: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.ids.get(&s) {
            return id;
        }
        let id = self.strings.len() as u32;
        self.ids.insert(s.clone(), id);
        self.strings.push(s);
        id
    }

    fn get(&self, id: u32) -> &str {
        &self.strings[id as usize]
    }

    fn pair_key(&self, p: (u32, u32)) -> (&str, &str) {
        (self.get(p.0), self.get(p.1))
    }
}

/// Segment one word into sub-word strings with continuation markers.
pub fn apply_bpe_word(word: &str, merges: &MergeTable) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    loop {
        let mut best: Option<(usize, usize)> = None; // (rank, position)
        for i in 0..syms.len().saturating_sub(1) {
            if let Some(r) = merges.rank(&syms[i], &syms[i + 1]) {
                if best.map_or(true, |(br, _)| r < br) {
                    best = Some((r, i));
                }
            }
        }
        let Some((rank, _)) = best else { break };
        let (left, right) = &merges.merges[rank];
        let mut out = Vec::with_capacity(syms.len());
        let mut i = 0;
        while i < syms.len() {
            if i + 1 < syms.len() && &syms[i] == left && &syms[i + 1] == right {
                out.push(format!("{left}{right}"));
                i += 2;
            } else {
                out.push(std::mem::take(&mut syms[i]));
                i += 1;
            }
        }
        syms = out;
    }
    let last = syms.len().saturating_sub(1);
    for s in &mut syms[..last] {
        s.push_str(CONTINUATION);
    }
    syms
}

/// Segment a whitespace-tokenized sentence into sub-word strings.
pub fn apply_bpe(sentence: &str, merges: &MergeTable) -> Vec<String> {
    sentence
        .split_whitespace()
        .flat_map(|w| apply_bpe_word(w, merges))
        .collect()
}

/// Memoizing segmenter for corpus-scale encoding.
pub struct BpeCodec<'a> {
    merges: &'a MergeTable,
    cache: HashMap<String, Vec<String>>,
}

impl<'a> BpeCodec<'a> {
    pub fn new(merges: &'a MergeTable) -> Self {
        BpeCodec {
            merges,
            cache: HashMap::new(),
        }
    }

    pub fn segment(&mut self, sentence: &str) -> Vec<String> {
        let mut out = Vec::new();
        for w in sentence.split_whitespace() {
            let pieces = self
                .cache
                .entry(w.to_string())
                .or_insert_with(|| apply_bpe_word(w, self.merges));
            out.extend(pieces.iter().cloned());
        }
        out
    }

    pub fn encode(&mut self, sentence: &str, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = Vec::new();
        for w in sentence.split_whitespace() {
            let pieces = self
                .cache
                .entry(w.to_string())
                .or_insert_with(|| apply_bpe_word(w, self.merges));
            out.extend(pieces.iter().map(|p| vocab.id_or_unk(p)));
        }
        out
    }
}

/// Occurrence counts of sub-word strings.
pub fn count_subwords<I, S>(segmented: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    let mut counts = HashMap::new();
    for sent in segmented {
        for tok in sent.as_ref() {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Shared vocabulary. Ids are dense; the five special tokens come first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(entries.len() + NUM_SPECIAL);
        let mut counts = Vec::with_capacity(entries.len() + NUM_SPECIAL);
        for s in SPECIAL_TOKENS {
            tokens.push(s.to_string());
            counts.push(0);
        }
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(XlmError::Format {
                    what: "vocabulary",
                    line: i + 1,
                    msg: format!("duplicate token {t:?}"),
                });
            }
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    /// Keep tokens with `count >= min_count`, most frequent first, ties in
    /// lexicographic order.
    pub fn build(counts: &HashMap<String, u64>, min_count: u64) -> Result<Self> {
        let mut kept: Vec<(String, u64)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count && c > 0 && !SPECIAL_TOKENS.contains(&t.as_str()))
            .map(|(t, &c)| (t.clone(), c))
            .collect();
        if kept.is_empty() {
            return Err(XlmError::Empty(format!(
                "no token reaches min_count {min_count}"
            )));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_entries(kept)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Render ids as text: markers joined, PAD/BOS/EOS dropped, UNK as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        let mut glue = false;
        for &id in ids {
            let tok = self.token(id).ok_or(XlmError::IdOutOfRange {
                id: id as usize,
                size: self.len(),
            })?;
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            match tok.strip_suffix(CONTINUATION) {
                Some(stem) if !is_special(id) => {
                    out.push_str(stem);
                    glue = true;
                }
                _ => {
                    out.push_str(tok);
                    glue = false;
                }
            }
        }
        Ok(out)
    }

    /// Whole-word lookup of whitespace-separated tokens, without BPE.
    pub fn encode_words(&self, sentence: &str) -> Vec<TokenId> {
        sentence.split_whitespace().map(|w| self.id_or_unk(w)).collect()
    }

    pub fn encode(&self, sentence: &str, merges: &MergeTable) -> Vec<TokenId> {
        apply_bpe(sentence, merges)
            .iter()
            .map(|t| self.id_or_unk(t))
            .collect()
    }

    /// Vocab file: `token<TAB>count` per line, specials first.
    pub fn to_vocab_string(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn from_vocab_str(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, count) = line.split_once('\t').ok_or_else(|| XlmError::Format {
                what: "vocab file",
                line: i + 1,
                msg: "expected `token<TAB>count`".into(),
            })?;
            let count: u64 = count.parse().map_err(|_| XlmError::Format {
                what: "vocab file",
                line: i + 1,
                msg: format!("bad count {count:?}"),
            })?;
            if i < NUM_SPECIAL {
                if tok != SPECIAL_TOKENS[i] {
                    return Err(XlmError::Format {
                        what: "vocab file",
                        line: i + 1,
                        msg: format!("expected special token {}", SPECIAL_TOKENS[i]),
                    });
                }
                continue;
            }
            entries.push((tok.to_string(), count));
        }
        if entries.is_empty() {
            return Err(XlmError::Empty("vocab file has no corpus tokens".into()));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_vocab_string()).map_err(|e| XlmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| XlmError::io(path, e))?;
        Self::from_vocab_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(pairs: &[(&str, &str)]) -> MergeTable {
        MergeTable::new(
            pairs
                .iter()
                .map(|(l, r)| (l.to_string(), r.to_string()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let t = learn_bpe(&["ab ab ac"], 1).unwrap();
        assert_eq!(t.merges(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn repeated_word_merges_identical_chars() {
        let t = learn_bpe(&["aa aa"], 1).unwrap();
        assert_eq!(t.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn learning_stops_when_pairs_run_out() {
        let t = learn_bpe(&["ab ab ac"], 50).unwrap();
        // ab (count 2) merges; ac occurs once and is never merged.
        assert_eq!(t.len(), 1);
        assert!(t.len() < 50);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // (b,c) and (a,b) both appear twice; ("a","b") sorts first.
        let t = learn_bpe(&["bc ab bc ab"], 1).unwrap();
        assert_eq!(t.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn learn_rejects_empty_sample_and_zero_merges() {
        assert!(learn_bpe::<&str>(&[], 3).is_err());
        assert!(learn_bpe(&["   "], 3).is_err());
        assert!(learn_bpe(&["ab"], 0).is_err());
    }

    #[test]
    fn apply_examples() {
        let t = table(&[("a", "b")]);
        assert_eq!(apply_bpe_word("ab", &t), vec!["ab"]);
        assert_eq!(apply_bpe_word("abc", &t), vec!["ab@@", "c"]);
        assert_eq!(apply_bpe("ab ab ac", &t), vec!["ab", "ab", "a@@", "c"]);
        let empty = MergeTable::default();
        assert_eq!(apply_bpe_word("x", &empty), vec!["x"]);
    }

    #[test]
    fn merges_apply_in_rank_order() {
        // "bcd": rank 0 is (c,d) so b+c never fires.
        let t = table(&[("c", "d"), ("b", "c")]);
        assert_eq!(apply_bpe_word("bcd", &t), vec!["b@@", "cd"]);
    }

    #[test]
    fn merge_table_rejects_bad_tables() {
        let dup = MergeTable::new(vec![
            ("a".into(), "b".into()),
            ("a".into(), "b".into()),
        ]);
        assert!(dup.is_err());
        let orphan = MergeTable::new(vec![("ab".into(), "c".into())]);
        assert!(orphan.is_err());
        assert!(MergeTable::from_codes_str("a b c\n").is_err());
    }

    fn counts(pairs: &[(&str, u64)]) -> HashMap<String, u64> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn vocab_threshold_and_order() {
        let v = Vocabulary::build(&counts(&[("x", 3), ("y", 1)]), 2).unwrap();
        assert_eq!(&v.tokens()[NUM_SPECIAL..], &["x".to_string()]);
        let v = Vocabulary::build(&counts(&[("x", 3), ("y", 1)]), 0).unwrap();
        assert_eq!(v.len(), NUM_SPECIAL + 2);
        let v = Vocabulary::build(&counts(&[("b", 2), ("a", 2)]), 0).unwrap();
        assert_eq!(&v.tokens()[NUM_SPECIAL..], &["a".to_string(), "b".to_string()]);
        assert_eq!(&v.tokens()[..NUM_SPECIAL], &SPECIAL_TOKENS.map(String::from));
        assert!(Vocabulary::build(&counts(&[("x", 1)]), 5).is_err());
    }

    #[test]
    fn decode_examples() {
        let v = Vocabulary::build(&counts(&[("ab@@", 3), ("c", 2), ("ab", 2), ("ac", 1)]), 0)
            .unwrap();
        let ids = |ts: &[&str]| ts.iter().map(|t| v.id(t).unwrap()).collect::<Vec<_>>();
        assert_eq!(v.decode(&ids(&["ab@@", "c"])).unwrap(), "abc");
        assert_eq!(v.decode(&ids(&["ab", "ac"])).unwrap(), "ab ac");
        let mut with_pad = ids(&["ab", "ac"]);
        with_pad.insert(1, PAD);
        with_pad.push(PAD);
        assert_eq!(v.decode(&with_pad).unwrap(), "ab ac");
        assert_eq!(v.decode(&[UNK, v.id("c").unwrap()]).unwrap(), "<unk> c");
        assert!(v.decode(&[999]).is_err());
    }

    #[test]
    fn files_round_trip_byte_exact() {
        let t = learn_bpe(&["low lower lowest newer wider new"], 20).unwrap();
        let codes = t.to_codes_string();
        let t2 = MergeTable::from_codes_str(&codes).unwrap();
        assert_eq!(t, t2);
        assert_eq!(codes, t2.to_codes_string());

        let seg: Vec<_> = ["low lower lowest", "newer wider new"]
            .iter()
            .map(|s| apply_bpe(s, &t))
            .collect();
        let v = Vocabulary::build(&count_subwords(&seg), 0).unwrap();
        let text = v.to_vocab_string();
        let v2 = Vocabulary::from_vocab_str(&text).unwrap();
        assert_eq!(v, v2);
        assert_eq!(text, v2.to_vocab_string());
    }

    fn word_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-e]{1,8}").unwrap()
    }

    proptest! {
        #[test]
        fn segmentation_is_lossless(
            sample in proptest::collection::vec(word_strategy(), 1..30),
            probe in word_strategy(),
            n in 1usize..40,
        ) {
            let table = learn_bpe(&[sample.join(" ")], n).unwrap();
            let pieces = apply_bpe_word(&probe, &table);
            let joined: String = pieces
                .iter()
                .map(|p| p.strip_suffix(CONTINUATION).unwrap_or(p))
                .collect();
            prop_assert_eq!(joined, probe);
            for p in &pieces[..pieces.len() - 1] {
                prop_assert!(p.ends_with(CONTINUATION));
            }
        }

        #[test]
        fn learning_is_deterministic(
            sample in proptest::collection::vec(word_strategy(), 1..30),
            n in 1usize..40,
        ) {
            let s = sample.join(" ");
            prop_assert_eq!(learn_bpe(&[&s], n).unwrap(), learn_bpe(&[&s], n).unwrap());
        }

        #[test]
        fn reencoding_decoded_text_is_stable(
            sample in proptest::collection::vec(word_strategy(), 1..30),
            n in 1usize..40,
        ) {
            let s = sample.join(" ");
            let table = learn_bpe(&[&s], n).unwrap();
            let vocab = Vocabulary::build(&count_subwords([apply_bpe(&s, &table)]), 0).unwrap();
            let ids = vocab.encode(&s, &table);
            let text = vocab.decode(&ids).unwrap();
            prop_assert_eq!(&text, &s);
            prop_assert_eq!(vocab.encode(&text, &table), ids);
        }
    }
}
