//! Continuous text streams and rectangular training batches.

use std::io::{Read, Write};

use crate::corpus::{LanguageId, ParallelStore, SentenceStore};
use crate::error::{Result, XlmError};
use crate::rng::Rng;
use crate::sampling::LanguageDistribution;
use crate::subword::{TokenId, BOS, EOS, PAD};

/// Target value for cells that carry no supervision.
pub const IGNORE: i32 = -1;

pub const DEFAULT_STREAM_LEN: usize = 256;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_TOKEN_BUDGET: usize = 4000;
pub const DEFAULT_MAX_PAIR_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    Clm,
    Mlm,
    Tlm,
}

impl Objective {
    pub fn attention(self) -> AttentionMode {
        match self {
            Objective::Clm => AttentionMode::Causal,
            Objective::Mlm | Objective::Tlm => AttentionMode::Bidirectional,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Objective::Clm => 0,
            Objective::Mlm => 1,
            Objective::Tlm => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        [Objective::Clm, Objective::Mlm, Objective::Tlm]
            .into_iter()
            .find(|o| o.tag() == t)
    }
}

/// One training step's inputs. All grids are row-major `[rows, cols]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Vec<TokenId>,
    pub positions: Vec<u32>,
    pub languages: Vec<u32>,
    /// `true` on real cells, `false` on padding.
    pub pad_mask: Vec<bool>,
    pub targets: Vec<i32>,
    pub attention: AttentionMode,
    pub objective: Objective,
}

impl Batch {
    pub fn new_padded(rows: usize, cols: usize, objective: Objective) -> Self {
        let n = rows * cols;
        Batch {
            rows,
            cols,
            tokens: vec![PAD; n],
            positions: vec![0; n],
            languages: vec![0; n],
            pad_mask: vec![false; n],
            targets: vec![IGNORE; n],
            attention: objective.attention(),
            objective,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn non_pad(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    pub fn row_tokens(&self, r: usize) -> &[TokenId] {
        &self.tokens[r * self.cols..(r + 1) * self.cols]
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE).count()
    }

    /// Build a batch of single sentences framed as `[BOS s EOS]`, padded to
    /// the longest row. Used for classification and held-out scoring.
    pub fn from_sentences(
        sentences: &[&[TokenId]],
        languages: &[LanguageId],
        max_len: usize,
        objective: Objective,
    ) -> Self {
        let cols = sentences
            .iter()
            .map(|s| (s.len() + 2).min(max_len))
            .max()
            .unwrap_or(0);
        let mut b = Batch::new_padded(sentences.len(), cols, objective);
        for (r, (s, &lang)) in sentences.iter().zip(languages).enumerate() {
            let row: Vec<TokenId> = std::iter::once(BOS)
                .chain(s.iter().copied())
                .chain(std::iter::once(EOS))
                .take(max_len)
                .collect();
            for c in 0..cols {
                let i = r * cols + c;
                b.languages[i] = lang as u32;
                if let Some(&t) = row.get(c) {
                    b.tokens[i] = t;
                    b.positions[i] = c as u32;
                    b.pad_mask[i] = true;
                }
            }
        }
        b
    }

    const MAGIC: &'static [u8; 4] = b"XLMB";
    const VERSION: u32 = 1;

    /// Debug dump: magic, version, rows, cols, objective tag, attention
    /// mode, then tokens/positions/languages as u32, pad mask as bytes and
    /// targets as i32, each grid row-major, little-endian.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        let attn = match self.attention {
            AttentionMode::Causal => 0u8,
            AttentionMode::Bidirectional => 1u8,
        };
        w.write_all(&[self.objective.tag(), attn])?;
        for grid in [&self.tokens, &self.positions, &self.languages] {
            for v in grid.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let mask: Vec<u8> = self.pad_mask.iter().map(|&m| m as u8).collect();
        w.write_all(&mask)?;
        for v in &self.targets {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| XlmError::Format {
            what: "batch dump",
            line: 0,
            msg: m.to_string(),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| XlmError::io("<batch dump>", e))?;
        if bytes.len() < 18 || &bytes[..4] != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != Self::VERSION {
            return Err(bad("unsupported version"));
        }
        let (rows, cols) = (u32_at(8) as usize, u32_at(12) as usize);
        let objective = Objective::from_tag(bytes[16]).ok_or_else(|| bad("bad objective"))?;
        let attention = match bytes[17] {
            0 => AttentionMode::Causal,
            1 => AttentionMode::Bidirectional,
            _ => return Err(bad("bad attention mode")),
        };
        let n = rows * cols;
        if bytes.len() != 18 + n * 17 {
            return Err(bad("truncated"));
        }
        let grid = |k: usize| -> Vec<u32> { (0..n).map(|i| u32_at(18 + 4 * (k * n + i))).collect() };
        let mask_at = 18 + 12 * n;
        Ok(Batch {
            rows,
            cols,
            tokens: grid(0),
            positions: grid(1),
            languages: grid(2),
            pad_mask: bytes[mask_at..mask_at + n].iter().map(|&b| b != 0).collect(),
            targets: (0..n)
                .map(|i| u32_at(mask_at + n + 4 * i) as i32)
                .collect(),
            attention,
            objective,
        })
    }
}

/// Read position in a store's virtual stream `s1 EOS s2 EOS ...`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamCursor {
    pub sentence: usize,
    /// Offset inside the sentence; `len` addresses the trailing EOS.
    pub offset: usize,
    pub epochs: u64,
}

impl StreamCursor {
    /// Flat offset into the virtual stream within the current epoch.
    pub fn position(&self, store: &SentenceStore) -> usize {
        store.sentences()[..self.sentence]
            .iter()
            .map(|s| s.len() + 1)
            .sum::<usize>()
            + self.offset
    }
}

/// Fill `stream_len` tokens from the cursor onward; returns whether the
/// corpus end was crossed.
pub fn build_stream(
    store: &SentenceStore,
    cursor: &mut StreamCursor,
    stream_len: usize,
) -> (Vec<TokenId>, bool) {
    assert!(!store.is_empty(), "stream over an empty store");
    let sents = store.sentences();
    let mut out = Vec::with_capacity(stream_len);
    let mut wrapped = false;
    while out.len() < stream_len {
        let s = &sents[cursor.sentence];
        if cursor.offset < s.len() {
            let take = (s.len() - cursor.offset).min(stream_len - out.len());
            out.extend_from_slice(&s[cursor.offset..cursor.offset + take]);
            cursor.offset += take;
        } else {
            out.push(EOS);
            cursor.offset = 0;
            cursor.sentence += 1;
            if cursor.sentence == sents.len() {
                cursor.sentence = 0;
                cursor.epochs += 1;
                wrapped = true;
            }
        }
    }
    (out, wrapped)
}

/// Language-homogeneous batches of full-length streams.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonoBatcher {
    pub cursors: Vec<StreamCursor>,
    pub batch_size: usize,
    pub stream_len: usize,
}

impl MonoBatcher {
    pub fn new(n_stores: usize, batch_size: usize, stream_len: usize) -> Self {
        MonoBatcher {
            cursors: vec![StreamCursor::default(); n_stores],
            batch_size,
            stream_len,
        }
    }

    /// Draw a language from `dist` (indexed like `stores`) and fill every
    /// row from that language's stream.
    pub fn next_batch(
        &mut self,
        stores: &[&SentenceStore],
        dist: &LanguageDistribution,
        objective: Objective,
        rng: &mut Rng,
    ) -> Batch {
        let k = dist.sample(rng);
        let store = stores[k];
        let (rows, cols) = (self.batch_size, self.stream_len);
        let mut b = Batch::new_padded(rows, cols, objective);
        for r in 0..rows {
            let (stream, _) = build_stream(store, &mut self.cursors[k], cols);
            let base = r * cols;
            b.tokens[base..base + cols].copy_from_slice(&stream);
            for c in 0..cols {
                b.positions[base + c] = c as u32;
            }
        }
        b.languages.fill(store.language() as u32);
        b.pad_mask.fill(true);
        b
    }

    pub fn state_words(&self) -> Vec<u64> {
        self.cursors
            .iter()
            .flat_map(|c| [c.sentence as u64, c.offset as u64, c.epochs])
            .collect()
    }

    pub fn restore(&mut self, words: &[u64]) -> Result<()> {
        if words.len() != 3 * self.cursors.len() {
            return Err(XlmError::Checkpoint("stream cursor state size".into()));
        }
        for (c, w) in self.cursors.iter_mut().zip(words.chunks(3)) {
            *c = StreamCursor {
                sentence: w[0] as usize,
                offset: w[1] as usize,
                epochs: w[2],
            };
        }
        Ok(())
    }
}

/// `next_mono_batch` as a free function over an explicit batcher.
pub fn next_mono_batch(
    batcher: &mut MonoBatcher,
    stores: &[&SentenceStore],
    dist: &LanguageDistribution,
    objective: Objective,
    rng: &mut Rng,
) -> Batch {
    batcher.next_batch(stores, dist, objective, rng)
}

/// Row length of a parallel pair laid out as `[BOS src EOS BOS tgt EOS]`.
pub fn tlm_row_len(src: &[TokenId], tgt: &[TokenId]) -> usize {
    src.len() + tgt.len() + 4
}

/// Sort by length, then pack greedily so each bucket's total stays within
/// `budget`. An oversized item gets a bucket of its own.
pub fn pack_buckets(lengths: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        if !current.is_empty() && used + lengths[i] > budget {
            buckets.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += lengths[i];
    }
    if !current.is_empty() {
        buckets.push(current);
    }
    buckets
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PairSchedule {
    buckets: Vec<Vec<usize>>,
    order: Vec<usize>,
    next: usize,
    epochs: u64,
}

/// Length-bucketed translation batches within a token budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TlmBatcher {
    schedules: Vec<PairSchedule>,
    pub token_budget: usize,
    pub max_pair_len: usize,
    /// Pairs skipped per store because their row exceeds `max_pair_len`.
    pub skipped: Vec<usize>,
}

impl TlmBatcher {
    pub fn new(stores: &[&ParallelStore], token_budget: usize, max_pair_len: usize) -> Self {
        let mut schedules = Vec::new();
        let mut skipped = Vec::new();
        for store in stores {
            let lens: Vec<usize> = store
                .pairs()
                .iter()
                .map(|(s, t)| tlm_row_len(s, t))
                .collect();
            let usable: Vec<usize> = (0..lens.len()).filter(|&i| lens[i] <= max_pair_len).collect();
            skipped.push(lens.len() - usable.len());
            let usable_lens: Vec<usize> = usable.iter().map(|&i| lens[i]).collect();
            let buckets: Vec<Vec<usize>> = pack_buckets(&usable_lens, token_budget)
                .into_iter()
                .map(|b| b.into_iter().map(|j| usable[j]).collect())
                .collect();
            schedules.push(PairSchedule {
                order: Vec::new(),
                next: 0,
                epochs: 0,
                buckets,
            });
        }
        TlmBatcher {
            schedules,
            token_budget,
            max_pair_len,
            skipped,
        }
    }

    pub fn bucket_count(&self, store: usize) -> usize {
        self.schedules[store].buckets.len()
    }

    /// Next bucket of `stores[k]`, reshuffling bucket order each epoch.
    pub fn next_batch(&mut self, stores: &[&ParallelStore], k: usize, rng: &mut Rng) -> Result<Batch> {
        let sched = &mut self.schedules[k];
        if sched.buckets.is_empty() {
            return Err(XlmError::Empty(format!(
                "parallel store {k} has no pair within {} tokens",
                self.max_pair_len
            )));
        }
        if sched.next >= sched.order.len() {
            sched.order = (0..sched.buckets.len()).collect();
            rng.shuffle(&mut sched.order);
            sched.next = 0;
            sched.epochs += 1;
        }
        let bucket = &sched.buckets[sched.order[sched.next]];
        sched.next += 1;
        let store = stores[k];
        let pairs: Vec<_> = bucket.iter().map(|&i| &store.pairs()[i]).collect();
        Ok(tlm_batch(
            &pairs,
            store.source_language(),
            store.target_language(),
        ))
    }

    pub fn state_words(&self) -> Vec<u64> {
        let mut w = Vec::new();
        for s in &self.schedules {
            w.push(s.next as u64);
            w.push(s.epochs);
            w.push(s.order.len() as u64);
            w.extend(s.order.iter().map(|&o| o as u64));
        }
        w
    }

    pub fn restore(&mut self, words: &[u64]) -> Result<()> {
        let err = || XlmError::Checkpoint("pair schedule state".into());
        let mut it = words.iter().copied();
        for s in &mut self.schedules {
            s.next = it.next().ok_or_else(err)? as usize;
            s.epochs = it.next().ok_or_else(err)?;
            let n = it.next().ok_or_else(err)? as usize;
            s.order = (0..n)
                .map(|_| it.next().map(|o| o as usize).ok_or_else(err))
                .collect::<Result<_>>()?;
            if s.order.iter().any(|&o| o >= s.buckets.len()) {
                return Err(err());
            }
        }
        if it.next().is_some() {
            return Err(err());
        }
        Ok(())
    }
}

/// Lay out pairs as TLM rows: positions restart at the target's BOS.
pub fn tlm_batch(
    pairs: &[&(Vec<TokenId>, Vec<TokenId>)],
    src_lang: LanguageId,
    tgt_lang: LanguageId,
) -> Batch {
    let cols = pairs.iter().map(|(s, t)| tlm_row_len(s, t)).max().unwrap_or(0);
    let mut b = Batch::new_padded(pairs.len(), cols, Objective::Tlm);
    b.languages.fill(tgt_lang as u32);
    for (r, (src, tgt)) in pairs.iter().enumerate() {
        let base = r * cols;
        let mut c = 0;
        for (seg, lang) in [(src, src_lang), (tgt, tgt_lang)] {
            let cells = std::iter::once(BOS)
                .chain(seg.iter().copied())
                .chain(std::iter::once(EOS));
            for (p, tok) in cells.enumerate() {
                b.tokens[base + c] = tok;
                b.positions[base + c] = p as u32;
                b.languages[base + c] = lang as u32;
                b.pad_mask[base + c] = true;
                c += 1;
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::language_probs;

    #[test]
    fn stream_wraps_with_eos_separators() {
        let store = SentenceStore::new(0, vec![vec![10, 11, 12], vec![20, 21]]).unwrap();
        let mut cur = StreamCursor::default();
        let (s, wrapped) = build_stream(&store, &mut cur, 8);
        assert_eq!(s, vec![10, 11, 12, EOS, 20, 21, EOS, 10]);
        assert!(wrapped);
        assert_eq!(cur, StreamCursor { sentence: 0, offset: 1, epochs: 1 });
    }

    #[test]
    fn long_sentence_is_cut_and_resumed() {
        let long: Vec<TokenId> = (0..300).map(|i| 10 + i as TokenId).collect();
        let store = SentenceStore::new(0, vec![long.clone()]).unwrap();
        let mut cur = StreamCursor::default();
        let (a, _) = build_stream(&store, &mut cur, 256);
        assert_eq!(a, long[..256]);
        assert_eq!(cur.position(&store), 256);
        let (b, _) = build_stream(&store, &mut cur, 10);
        assert_eq!(b, long[256..266]);
    }

    #[test]
    fn consecutive_streams_tile_the_corpus() {
        let store =
            SentenceStore::new(0, vec![vec![5, 6, 7], vec![8], vec![9, 10, 11, 12]]).unwrap();
        let mut whole_cur = StreamCursor::default();
        let (whole, _) = build_stream(&store, &mut whole_cur, 33);
        let mut cur = StreamCursor::default();
        let mut pieces = Vec::new();
        for len in [4, 7, 1, 9, 12] {
            pieces.extend(build_stream(&store, &mut cur, len).0);
        }
        assert_eq!(pieces, whole);
        assert_eq!(cur, whole_cur);
    }

    #[test]
    fn mono_batch_layout() {
        let store = SentenceStore::new(2, vec![vec![7, 8, 9]; 10]).unwrap();
        let dist = language_probs(&[10], 0.7).unwrap();
        let mut b = MonoBatcher::new(1, 4, 16);
        let mut rng = Rng::seed_from_u64(0);
        let batch = b.next_batch(&[&store], &dist, Objective::Mlm, &mut rng);
        assert_eq!((batch.rows, batch.cols), (4, 16));
        assert!(batch.languages.iter().all(|&l| l == 2));
        assert!(batch.pad_mask.iter().all(|&m| m));
        for r in 0..4 {
            let pos = &batch.positions[r * 16..(r + 1) * 16];
            assert_eq!(pos, (0..16).collect::<Vec<u32>>().as_slice());
        }
        assert_eq!(batch.attention, AttentionMode::Bidirectional);
    }

    #[test]
    fn mono_batches_follow_language_distribution() {
        let a = SentenceStore::new(0, vec![vec![7, 8]; 900]).unwrap();
        let b = SentenceStore::new(1, vec![vec![9]; 100]).unwrap();
        let dist = language_probs(&[900, 100], 0.5).unwrap();
        let mut batcher = MonoBatcher::new(2, 1, 4);
        let mut rng = Rng::seed_from_u64(9);
        let n = 10_000;
        let mut zero = 0;
        for _ in 0..n {
            let batch = batcher.next_batch(&[&a, &b], &dist, Objective::Clm, &mut rng);
            let l = batch.languages[0];
            assert!(batch.languages.iter().all(|&x| x == l));
            zero += (l == 0) as usize;
        }
        let f = zero as f64 / n as f64;
        assert!((0.73..=0.77).contains(&f), "{f}");
    }

    #[test]
    fn tlm_positions_reset_at_target() {
        let pair = (vec![10, 11, 12], vec![20, 21]);
        let b = tlm_batch(&[&pair], 0, 1);
        assert_eq!(b.cols, 9);
        assert_eq!(b.positions, vec![0, 1, 2, 3, 4, 0, 1, 2, 3]);
        assert_eq!(b.languages, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.tokens, vec![BOS, 10, 11, 12, EOS, BOS, 20, 21, EOS]);
        assert!(b.pad_mask.iter().all(|&m| m));
    }

    #[test]
    fn tlm_padding_cells() {
        let p1 = (vec![10], vec![20]);
        let p2 = (vec![10, 11, 12], vec![20, 21]);
        let b = tlm_batch(&[&p1, &p2], 0, 1);
        assert_eq!((b.rows, b.cols), (2, 9));
        for c in 6..9 {
            assert!(!b.pad_mask[c]);
            assert_eq!((b.tokens[c], b.positions[c], b.languages[c]), (PAD, 0, 1));
        }
        assert_eq!(b.non_pad(), 6 + 9);
    }

    #[test]
    fn bucketing_groups_similar_lengths() {
        assert_eq!(pack_buckets(&[4, 20, 4], 10), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn single_pair_store_gives_one_unpadded_row() {
        let store = ParallelStore::new(0, 1, vec![(vec![10, 11], vec![20])]).unwrap();
        let mut tb = TlmBatcher::new(&[&store], 4000, 512);
        let mut rng = Rng::seed_from_u64(0);
        let b = tb.next_batch(&[&store], 0, &mut rng).unwrap();
        assert_eq!(b.rows, 1);
        assert_eq!(b.non_pad(), b.cells());
    }

    #[test]
    fn tlm_batches_respect_budget_and_skip_long_pairs() {
        let mut pairs = Vec::new();
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..300 {
            let s = (0..1 + rng.below(30)).map(|i| 10 + i as TokenId).collect();
            let t = (0..1 + rng.below(30)).map(|i| 10 + i as TokenId).collect();
            pairs.push((s, t));
        }
        pairs.push((vec![10; 600], vec![11; 3]));
        let store = ParallelStore::new(0, 1, pairs).unwrap();
        let mut tb = TlmBatcher::new(&[&store], 100, 512);
        assert_eq!(tb.skipped, vec![1]);
        let mut seen = 0;
        for _ in 0..tb.bucket_count(0) {
            let b = tb.next_batch(&[&store], 0, &mut rng).unwrap();
            assert!(b.non_pad() <= 100);
            seen += b.rows;
            for r in 0..b.rows {
                let pos = &b.positions[r * b.cols..(r + 1) * b.cols];
                let mask = &b.pad_mask[r * b.cols..(r + 1) * b.cols];
                let resets = (1..b.cols).filter(|&c| mask[c] && pos[c] == 0).count();
                assert_eq!(resets, 1);
            }
        }
        assert_eq!(seen, 300);
    }

    #[test]
    fn dump_round_trip() {
        let pair = (vec![10, 11, 12], vec![20, 21]);
        let p1 = (vec![10], vec![20]);
        let mut b = tlm_batch(&[&pair, &p1], 0, 1);
        b.targets[2] = 11;
        let mut buf = Vec::new();
        b.write_dump(&mut buf).unwrap();
        let back = Batch::read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(back, b);
        buf.pop();
        assert!(Batch::read_dump(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn batcher_state_restores_sequence() {
        let a = SentenceStore::new(0, (0..50).map(|i| vec![10 + (i % 7) as TokenId; 1 + i % 5]).collect())
            .unwrap();
        let b = SentenceStore::new(1, (0..20).map(|i| vec![30 + (i % 3) as TokenId; 2 + i % 4]).collect())
            .unwrap();
        let dist = language_probs(&[50, 20], 0.7).unwrap();
        let mut batcher = MonoBatcher::new(2, 3, 11);
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..7 {
            batcher.next_batch(&[&a, &b], &dist, Objective::Mlm, &mut rng);
        }
        let words = batcher.state_words();
        let mut restored = MonoBatcher::new(2, 3, 11);
        restored.restore(&words).unwrap();
        let mut rng2 = rng.clone();
        for _ in 0..5 {
            assert_eq!(
                batcher.next_batch(&[&a, &b], &dist, Objective::Mlm, &mut rng),
                restored.next_batch(&[&a, &b], &dist, Objective::Mlm, &mut rng2)
            );
        }
    }
}
