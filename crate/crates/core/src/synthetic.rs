//! Synthetic order-2 languages and their ciphers, with ground-truth
//! translations, dictionaries and a topic-labeled classification task.
//!
//! A sentence has a latent topic (0 or 1). Token classes follow a sparse
//! order-2 chain; within a class, members are Zipf-weighted and members
//! whose rank parity matches the topic are boosted. Anchor types are
//! topic-neutral and spelled identically in both languages.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{ParallelStore, SentenceStore};
use crate::error::{Result, XlmError};
use crate::evaluation::LabeledSet;
use crate::rng::Rng;
use crate::subword::{count_subwords, Vocabulary};
use crate::training::TrainData;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CipherMode {
    /// B is a token-level bijection of A.
    Cipher,
    /// B comes from an unrelated grammar.
    Independent,
}

impl FromStr for CipherMode {
    type Err = XlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cipher" => Ok(CipherMode::Cipher),
            "independent" => Ok(CipherMode::Independent),
            _ => Err(XlmError::Config(format!(
                "cipher mode must be cipher or independent, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for CipherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CipherMode::Cipher => "cipher",
            CipherMode::Independent => "independent",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Token types per language, anchors included.
    pub vocab_size: usize,
    /// Monolingual training sentences per language.
    pub sentences: usize,
    pub valid: usize,
    pub test: usize,
    pub parallel: usize,
    /// Labeled sentences per classification split.
    pub classify: usize,
    pub mode: CipherMode,
    pub anchor_fraction: f64,
    pub seed: u64,
    pub classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub topic_boost: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 200,
            sentences: 20_000,
            valid: 500,
            test: 500,
            parallel: 5_000,
            classify: 1_000,
            mode: CipherMode::Cipher,
            anchor_fraction: 0.1,
            seed: 0,
            classes: 10,
            min_len: 6,
            max_len: 16,
            topic_boost: 4.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(XlmError::InvalidArgument(m));
        if self.vocab_size < 20 {
            return bad(format!("vocab size {} below 20", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.anchor_fraction) {
            return bad(format!("anchor fraction {} outside [0, 1)", self.anchor_fraction));
        }
        if self.classes < 2 || self.classes > self.vocab_size / 2 {
            return bad(format!("{} classes for {} types", self.classes, self.vocab_size));
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return bad(format!("sentence length range {}..={}", self.min_len, self.max_len));
        }
        if !(self.topic_boost >= 1.0) {
            return bad(format!("topic boost {} below 1", self.topic_boost));
        }
        Ok(())
    }
}

const NEXT_CLASSES: usize = 3;

/// Order-2 class grammar over `types` token types.
#[derive(Clone, Debug)]
pub struct Grammar {
    classes: usize,
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// Indexed by `prev2 * (classes + 1) + prev1`, with `classes` as the
    /// sentence-start symbol.
    transitions: Vec<Vec<(usize, f64)>>,
    min_len: usize,
    max_len: usize,
}

impl Grammar {
    pub fn new(types: usize, classes: usize, min_len: usize, max_len: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..types).collect();
        rng.shuffle(&mut order);
        let mut members = vec![Vec::new(); classes];
        let mut class_of = vec![0; types];
        for (i, &t) in order.iter().enumerate() {
            members[i % classes].push(t);
            class_of[t] = i % classes;
        }
        let states = (classes + 1) * (classes + 1);
        let transitions = (0..states)
            .map(|_| {
                let mut picks: Vec<usize> = (0..classes).collect();
                rng.shuffle(&mut picks);
                let raw: Vec<f64> = (0..NEXT_CLASSES).map(|_| 0.2 + rng.next_f64()).collect();
                let z: f64 = raw.iter().sum();
                picks[..NEXT_CLASSES.min(classes)]
                    .iter()
                    .zip(&raw)
                    .map(|(&c, &w)| (c, w / z))
                    .collect()
            })
            .collect();
        Grammar {
            classes,
            class_of,
            members,
            transitions,
            min_len,
            max_len,
        }
    }

    pub fn class_of(&self, t: usize) -> usize {
        self.class_of[t]
    }

    fn draw(items: &[(usize, f64)], rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for &(x, p) in items {
            acc += p;
            if u < acc {
                return x;
            }
        }
        items.last().unwrap().0
    }

    fn member_probs(&self, class: usize, topic: usize, anchors: &[bool], boost: f64) -> Vec<(usize, f64)> {
        let weights: Vec<(usize, f64)> = self.members[class]
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let base = 1.0 / (r as f64 + 1.0);
                let w = if !anchors[t] && r % 2 == topic { base * boost } else { base };
                (t, w)
            })
            .collect();
        let z: f64 = weights.iter().map(|w| w.1).sum();
        weights.into_iter().map(|(t, w)| (t, w / z)).collect()
    }

    /// Exact `ln p(sentence)` with the topic marginalized, excluding the
    /// length draw.
    pub fn log_prob(&self, sentence: &[usize], anchors: &[bool], boost: f64) -> f64 {
        let per_topic: Vec<f64> = (0..2)
            .map(|topic| {
                let (mut p2, mut p1) = (self.classes, self.classes);
                let mut lp = 0.0;
                for &t in sentence {
                    let c = self.class_of[t];
                    let pc = self.transitions[p2 * (self.classes + 1) + p1]
                        .iter()
                        .find(|x| x.0 == c)
                        .map_or(0.0, |x| x.1);
                    let pm = self
                        .member_probs(c, topic, anchors, boost)
                        .iter()
                        .find(|x| x.0 == t)
                        .map_or(0.0, |x| x.1);
                    lp += pc.ln() + pm.ln();
                    p2 = p1;
                    p1 = c;
                }
                lp
            })
            .collect();
        let m = per_topic[0].max(per_topic[1]);
        m + ((per_topic[0] - m).exp() * 0.5 + (per_topic[1] - m).exp() * 0.5).ln()
    }

    /// One sentence of type indices under `topic`.
    pub fn sample(&self, topic: usize, anchors: &[bool], boost: f64, rng: &mut Rng) -> Vec<usize> {
        let len = self.min_len + rng.below(self.max_len - self.min_len + 1);
        let (mut p2, mut p1) = (self.classes, self.classes);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let c = Self::draw(&self.transitions[p2 * (self.classes + 1) + p1], rng);
            let weights = self.member_probs(c, topic, anchors, boost);
            out.push(Self::draw(&weights, rng));
            p2 = p1;
            p1 = c;
        }
        out
    }
}

/// Everything `make_synthetic` emits, as text lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticCorpus {
    pub train_a: Vec<String>,
    pub train_b: Vec<String>,
    pub valid_a: Vec<String>,
    pub valid_b: Vec<String>,
    pub test_a: Vec<String>,
    pub test_b: Vec<String>,
    pub para_a: Vec<String>,
    pub para_b: Vec<String>,
    /// Gold A to B translations over non-anchor types.
    pub dictionary: Vec<(String, String)>,
    /// Full type mapping, anchors included (identity on anchors).
    pub cipher: Vec<(String, String)>,
    pub cls_train_a: Vec<(usize, String)>,
    pub cls_test_a: Vec<(usize, String)>,
    pub cls_train_b: Vec<(usize, String)>,
    pub cls_test_b: Vec<(usize, String)>,
    /// Cross-lingual similarity gold: 1 for translations, 0.5 for the same
    /// grammatical class, 0 otherwise.
    pub wordsim: Vec<(String, String, f64)>,
    /// Mean per-token negative log-likelihood of `valid_a` under the true
    /// generator, topic marginalized and sentence ends excluded.
    pub valid_a_nll: f64,
}

struct Language {
    grammar: Grammar,
    names: Vec<String>,
}

impl Language {
    fn render(&self, s: &[usize]) -> String {
        s.iter()
            .map(|&t| self.names[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn make_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let v = config.vocab_size;
    let mut root = Rng::seed_from_u64(config.seed);
    let mut grammar_rng = root.split();
    let mut anchor_rng = root.split();
    let mut cipher_rng = root.split();
    let mut other_rng = root.split();
    let mut sample_rng = root.split();

    let grammar_a = Grammar::new(v, config.classes, config.min_len, config.max_len, &mut grammar_rng);
    let n_anchor = (config.anchor_fraction * v as f64).round() as usize;
    let mut ids: Vec<usize> = (0..v).collect();
    anchor_rng.shuffle(&mut ids);
    let mut anchors = vec![false; v];
    for &i in &ids[..n_anchor] {
        anchors[i] = true;
    }
    let name_a: Vec<String> = (0..v)
        .map(|i| if anchors[i] { format!("n{i}") } else { format!("a{i}") })
        .collect();
    let non_anchor: Vec<usize> = (0..v).filter(|&i| !anchors[i]).collect();
    let mut perm = non_anchor.clone();
    cipher_rng.shuffle(&mut perm);
    let mut map = (0..v).collect::<Vec<usize>>();
    for (&src, &dst) in non_anchor.iter().zip(&perm) {
        map[src] = dst;
    }
    let name_b: Vec<String> = match config.mode {
        CipherMode::Cipher => (0..v)
            .map(|i| if anchors[i] { name_a[i].clone() } else { format!("b{}", map[i]) })
            .collect(),
        CipherMode::Independent => (0..v)
            .map(|i| if anchors[i] { name_a[i].clone() } else { format!("u{i}") })
            .collect(),
    };
    let lang_a = Language {
        grammar: grammar_a,
        names: name_a,
    };
    let lang_b = Language {
        grammar: match config.mode {
            CipherMode::Cipher => lang_a.grammar.clone(),
            CipherMode::Independent => {
                Grammar::new(v, config.classes, config.min_len, config.max_len, &mut other_rng)
            }
        },
        names: name_b,
    };

    let boost = config.topic_boost;
    let rng = &mut sample_rng;
    let sample = |lang: &Language, rng: &mut Rng| -> (usize, Vec<usize>) {
        let topic = rng.below(2);
        (topic, lang.grammar.sample(topic, &anchors, boost, rng))
    };
    let mono = |lang: &Language, n: usize, rng: &mut Rng| -> Vec<String> {
        (0..n).map(|_| lang.render(&sample(lang, rng).1)).collect()
    };
    let train_a = mono(&lang_a, config.sentences, rng);
    let train_b = mono(&lang_b, config.sentences, rng);
    let valid_raw: Vec<Vec<usize>> = (0..config.valid).map(|_| sample(&lang_a, rng).1).collect();
    let tokens: usize = valid_raw.iter().map(Vec::len).sum();
    let nll: f64 = valid_raw
        .iter()
        .map(|s| -lang_a.grammar.log_prob(s, &anchors, boost))
        .sum();
    let mut c = SyntheticCorpus {
        train_a,
        train_b,
        valid_a: valid_raw.iter().map(|s| lang_a.render(s)).collect(),
        valid_b: mono(&lang_b, config.valid, rng),
        test_a: mono(&lang_a, config.test, rng),
        test_b: mono(&lang_b, config.test, rng),
        valid_a_nll: nll / tokens.max(1) as f64,
        ..SyntheticCorpus::default()
    };
    let labeled = |lang: &Language, n: usize, rng: &mut Rng| -> Vec<(usize, String)> {
        (0..n)
            .map(|_| {
                let (topic, s) = sample(lang, rng);
                (topic, lang.render(&s))
            })
            .collect()
    };
    c.cls_train_a = labeled(&lang_a, config.classify, rng);
    c.cls_test_a = labeled(&lang_a, config.classify, rng);
    c.cls_train_b = labeled(&lang_b, config.classify, rng);
    c.cls_test_b = labeled(&lang_b, config.classify, rng);

    if config.mode == CipherMode::Cipher {
        for _ in 0..config.parallel {
            let (_, s) = sample(&lang_a, rng);
            c.para_a.push(lang_a.render(&s));
            c.para_b.push(lang_b.render(&s));
        }
        c.dictionary = non_anchor
            .iter()
            .map(|&i| (lang_a.names[i].clone(), lang_b.names[i].clone()))
            .collect();
        c.cipher = (0..v)
            .map(|i| (lang_a.names[i].clone(), lang_b.names[i].clone()))
            .collect();
        for &i in &non_anchor {
            let j = non_anchor[rng.below(non_anchor.len())];
            let score = if i == j {
                1.0
            } else if lang_a.grammar.class_of(i) == lang_a.grammar.class_of(j) {
                0.5
            } else {
                0.0
            };
            c.wordsim.push((lang_a.names[i].clone(), lang_b.names[i].clone(), 1.0));
            c.wordsim.push((lang_a.names[i].clone(), lang_b.names[j].clone(), score));
        }
    }
    Ok(c)
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| XlmError::io(path, e))
}

impl SyntheticCorpus {
    /// Write every artifact into `dir` (created if missing). Returns the
    /// file names written.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir).map_err(|e| XlmError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, lines: Vec<String>| -> Result<()> {
            write_lines(&dir.join(name), lines)?;
            written.push(name.to_string());
            Ok(())
        };
        put("train.a.txt", self.train_a.clone())?;
        put("train.b.txt", self.train_b.clone())?;
        put("valid.a.txt", self.valid_a.clone())?;
        put("valid.b.txt", self.valid_b.clone())?;
        put("test.a.txt", self.test_a.clone())?;
        put("test.b.txt", self.test_b.clone())?;
        let labeled = |v: &[(usize, String)]| v.iter().map(|(l, s)| format!("{l}\t{s}")).collect();
        put("cls.train.a.tsv", labeled(&self.cls_train_a))?;
        put("cls.test.a.tsv", labeled(&self.cls_test_a))?;
        put("cls.train.b.tsv", labeled(&self.cls_train_b))?;
        put("cls.test.b.tsv", labeled(&self.cls_test_b))?;
        if !self.cipher.is_empty() {
            put("para.a-b.a.txt", self.para_a.clone())?;
            put("para.a-b.b.txt", self.para_b.clone())?;
            let pairs = |v: &[(String, String)]| v.iter().map(|(a, b)| format!("{a}\t{b}")).collect();
            put("dict.a-b.tsv", pairs(&self.dictionary))?;
            put("cipher.a-b.tsv", pairs(&self.cipher))?;
            put(
                "wordsim.a-b.tsv",
                self.wordsim
                    .iter()
                    .map(|(a, b, s)| format!("{a}\t{b}\t{s}"))
                    .collect(),
            )?;
        }
        Ok(written)
    }

    /// Map a B sentence back to A through the inverse cipher.
    pub fn decipher(&self, b_sentence: &str) -> Option<String> {
        let inverse: std::collections::HashMap<&str, &str> =
            self.cipher.iter().map(|(a, b)| (b.as_str(), a.as_str())).collect();
        b_sentence
            .split(' ')
            .map(|w| inverse.get(w).map(|s| s.to_string()))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(" "))
    }

    /// Whole-word vocabulary over both training corpora.
    pub fn word_vocabulary(&self) -> Result<Vocabulary> {
        let words: Vec<Vec<String>> = self
            .train_a
            .iter()
            .chain(&self.train_b)
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect();
        Vocabulary::build(&count_subwords(&words), 1)
    }

    /// Word-level training data with languages `a` = 0 and `b` = 1; the
    /// parallel corpus is included when `parallel` is set.
    pub fn train_data(&self, vocab: &Vocabulary, parallel: bool) -> Result<TrainData> {
        let enc = |v: &[String]| v.iter().map(|s| vocab.encode_words(s)).collect::<Vec<_>>();
        let mut stores = Vec::new();
        if parallel {
            let pairs = enc(&self.para_a).into_iter().zip(enc(&self.para_b)).collect();
            stores.push(ParallelStore::new(0, 1, pairs)?);
        }
        Ok(TrainData {
            names: vec!["a".into(), "b".into()],
            train: vec![
                SentenceStore::new(0, enc(&self.train_a))?,
                SentenceStore::new(1, enc(&self.train_b))?,
            ],
            valid: vec![
                Some(SentenceStore::new(0, enc(&self.valid_a))?),
                Some(SentenceStore::new(1, enc(&self.valid_b))?),
            ],
            parallel: stores,
        })
    }

    /// Word-level labeled split.
    pub fn labeled(split: &[(usize, String)], vocab: &Vocabulary) -> LabeledSet {
        LabeledSet {
            labels: split.iter().map(|(l, _)| *l).collect(),
            sentences: split.iter().map(|(_, s)| vocab.encode_words(s)).collect(),
        }
    }
}
