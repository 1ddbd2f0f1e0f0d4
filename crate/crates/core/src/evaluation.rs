//! Held-out perplexity, embedding alignment metrics, word-similarity
//! correlation and zero-shot classification transfer.

use std::path::Path;

use crate::corpus::{read_lines, LanguageId, SentenceStore};
use crate::error::{Result, XlmError};
use crate::model::{Mode, ModelConfig, ModelState};
use crate::numerics::{Graph, Tensor};
use crate::objectives::{apply_mlm, clm_targets, DEFAULT_MASK_RATE};
use crate::rng::Rng;
use crate::sampling::SubsampleWeights;
use crate::streams::{Batch, Objective};
use crate::subword::{is_special, TokenId, Vocabulary, EOS};
use crate::training::{adam_step, clip_global_norm, lr_at, OptimizerState, TrainData, TrainPlan, Trainer};

const EVAL_ROWS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PplObjective {
    Clm,
    Mlm,
}

/// The held-out store as one `s1 EOS s2 EOS ...` stream cut into rows of
/// `stream_len` tokens.
pub fn heldout_rows(store: &SentenceStore, stream_len: usize) -> Vec<Vec<TokenId>> {
    let mut stream = Vec::with_capacity(store.total_tokens() + store.len());
    for s in store.sentences() {
        stream.extend_from_slice(s);
        stream.push(EOS);
    }
    stream.chunks(stream_len.max(2)).map(<[TokenId]>::to_vec).collect()
}

fn rows_batch(rows: &[Vec<TokenId>], language: LanguageId, objective: Objective) -> Batch {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut b = Batch::new_padded(rows.len(), cols, objective);
    b.languages.fill(language as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, &t) in row.iter().enumerate() {
            let i = r * cols + c;
            b.tokens[i] = t;
            b.positions[i] = c as u32;
            b.pad_mask[i] = true;
        }
    }
    b
}

/// CLM: exp of the mean next-token NLL over the whole held-out stream.
/// MLM: exp of the mean NLL over a fixed 15% selection drawn from `seed`
/// with uniform token weights, identical on every call.
pub fn perplexity(
    model: &ModelState<f32>,
    heldout: &SentenceStore,
    objective: PplObjective,
    stream_len: usize,
    seed: u64,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(XlmError::Empty("held-out store".into()));
    }
    let rows = heldout_rows(heldout, stream_len);
    let weights = SubsampleWeights::uniform(model.config.vocab_size);
    let mut rng = Rng::seed_from_u64(seed);
    let mut unused = Rng::seed_from_u64(0);
    let (mut nll, mut count) = (0.0f64, 0usize);
    for group in rows.chunks(EVAL_ROWS) {
        let batch = match objective {
            PplObjective::Clm => clm_targets(&rows_batch(group, heldout.language(), Objective::Clm))?,
            PplObjective::Mlm => {
                let b = rows_batch(group, heldout.language(), Objective::Mlm);
                apply_mlm(&b, &weights, DEFAULT_MASK_RATE, &mut rng)?.0
            }
        };
        let n = batch.target_count();
        if n == 0 {
            continue;
        }
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let loss = vars.lm_loss(&mut g, &batch, Mode::Eval, &mut unused)?;
        nll += g.value(loss).item() as f64 * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(XlmError::Empty("held-out data yields no targets".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Source/target word pairs with known translations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslationDictionary {
    pub pairs: Vec<(String, String)>,
}

impl TranslationDictionary {
    pub fn load(path: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (s, t) = line.split_once('\t').ok_or_else(|| XlmError::Format {
                what: "dictionary",
                line: i + 1,
                msg: "expected src<TAB>tgt".into(),
            })?;
            pairs.push((s.to_string(), t.to_string()));
        }
        if pairs.is_empty() {
            return Err(XlmError::Empty(format!("dictionary {}", path.display())));
        }
        Ok(TranslationDictionary { pairs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    pub mean_cosine: f64,
    pub mean_l2: f64,
    pub used: usize,
    pub skipped: usize,
}

fn row(table: &Tensor<f32>, id: TokenId) -> Vec<f64> {
    let d = table.shape()[1];
    let i = id as usize;
    table.data()[i * d..(i + 1) * d].iter().map(|&x| x as f64).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn word_id(vocab: &Vocabulary, w: &str) -> Option<TokenId> {
    vocab.id(w).filter(|&i| !is_special(i))
}

/// Mean cosine and L2 distance between token-table rows of dictionary
/// pairs. Words that are not a single vocabulary entry are skipped.
pub fn alignment_metrics(
    model: &ModelState<f32>,
    vocab: &Vocabulary,
    dict: &TranslationDictionary,
) -> Result<AlignmentReport> {
    let table = model.token_table();
    let (mut cos, mut dist, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for (s, t) in &dict.pairs {
        match (word_id(vocab, s), word_id(vocab, t)) {
            (Some(a), Some(b)) if (a as usize) < table.shape()[0] && (b as usize) < table.shape()[0] => {
                let (ra, rb) = (row(table, a), row(table, b));
                cos += cosine(&ra, &rb);
                dist += l2(&ra, &rb);
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    if used == 0 {
        return Err(XlmError::Empty("no dictionary pair is in the vocabulary".into()));
    }
    Ok(AlignmentReport {
        mean_cosine: cos / used as f64,
        mean_l2: dist / used as f64,
        used,
        skipped,
    })
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(XlmError::InvalidArgument(format!(
            "pearson needs two equal series of length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(XlmError::InvalidArgument("zero variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub pearson: f64,
    pub used: usize,
    pub skipped: usize,
}

/// `w1<TAB>w2<TAB>score` lines.
pub fn load_similarity_gold(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let err = |m: &str| XlmError::Format {
            what: "word-similarity gold",
            line: i + 1,
            msg: m.into(),
        };
        if f.len() != 3 {
            return Err(err("expected w1<TAB>w2<TAB>score"));
        }
        let score = f[2].parse().map_err(|_| err("score is not a number"))?;
        out.push((f[0].to_string(), f[1].to_string(), score));
    }
    Ok(out)
}

/// Pearson correlation between token-table cosines and gold scores.
pub fn word_similarity(
    model: &ModelState<f32>,
    vocab: &Vocabulary,
    gold: &[(String, String, f64)],
) -> Result<SimilarityReport> {
    let table = model.token_table();
    let (mut xs, mut ys, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (a, b, s) in gold {
        match (word_id(vocab, a), word_id(vocab, b)) {
            (Some(x), Some(y)) => {
                xs.push(cosine(&row(table, x), &row(table, y)));
                ys.push(*s);
            }
            _ => skipped += 1,
        }
    }
    if xs.len() < 2 {
        return Err(XlmError::Empty(format!("{} usable similarity triples", xs.len())));
    }
    Ok(SimilarityReport {
        pearson: pearson(&xs, &ys)?,
        used: xs.len(),
        skipped,
    })
}

/// Sentences with class labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabeledSet {
    pub sentences: Vec<Vec<TokenId>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn label_set(&self) -> Vec<usize> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// `label<TAB>sentence` lines, encoded with `encode`.
    pub fn load(path: &Path, mut encode: impl FnMut(&str) -> Vec<TokenId>) -> Result<Self> {
        let mut set = LabeledSet::default();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| XlmError::Format {
                what: "labeled data",
                line: i + 1,
                msg: m.into(),
            };
            let (l, s) = line.split_once('\t').ok_or_else(|| err("expected label<TAB>sentence"))?;
            set.labels.push(l.parse().map_err(|_| err("label is not an integer"))?);
            set.sentences.push(encode(s));
        }
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetunePlan {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup: u64,
    pub max_len: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for FinetunePlan {
    fn default() -> Self {
        FinetunePlan {
            steps: 300,
            batch_size: 32,
            peak_lr: 1e-4,
            warmup: 30,
            max_len: 64,
            clip: 5.0,
            seed: 0,
        }
    }
}

fn labeled_batch(set: &LabeledSet, idx: &[usize], language: LanguageId, max_len: usize) -> (Batch, Vec<i32>) {
    let sents: Vec<&[TokenId]> = idx.iter().map(|&i| set.sentences[i].as_slice()).collect();
    let langs = vec![language; idx.len()];
    let b = Batch::from_sentences(&sents, &langs, max_len, Objective::Mlm);
    (b, idx.iter().map(|&i| set.labels[i] as i32).collect())
}

/// Fine-tune every parameter (encoder and head) on `train`; returns the
/// per-step losses. Attaches a classifier head if the model has none.
pub fn finetune_classifier(
    model: &mut ModelState<f32>,
    train: &LabeledSet,
    language: LanguageId,
    plan: &FinetunePlan,
) -> Result<Vec<f32>> {
    if train.is_empty() {
        return Err(XlmError::Empty("classification training set".into()));
    }
    let mut rng = Rng::seed_from_u64(plan.seed);
    if model.classes == 0 {
        model.attach_classifier(train.classes().max(2), &mut rng.split())?;
    }
    let mut opt = OptimizerState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut next = order.len();
    let mut losses = Vec::with_capacity(plan.steps as usize);
    for _ in 0..plan.steps {
        let mut step_rng = rng.split();
        let mut idx = Vec::with_capacity(plan.batch_size);
        while idx.len() < plan.batch_size.min(train.len()) {
            if next == order.len() {
                step_rng.shuffle(&mut order);
                next = 0;
            }
            idx.push(order[next]);
            next += 1;
        }
        let (batch, labels) = labeled_batch(train, &idx, language, plan.max_len);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, true);
        let loss = vars.classification_loss(&mut g, &batch, &labels, Mode::Train, &mut step_rng)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(XlmError::NonFinite("fine-tuning loss".into()));
        }
        g.backward(loss)?;
        let mut grads: Vec<Vec<f32>> = vars
            .vars
            .iter()
            .zip(&model.params)
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        clip_global_norm(&mut grads, plan.clip);
        let lr = lr_at(opt.t + 1, plan.warmup, plan.peak_lr);
        adam_step(&mut model.params, &grads, &mut opt, lr)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Class predictions for every sentence of `set` (eval mode).
pub fn predict(model: &ModelState<f32>, set: &LabeledSet, language: LanguageId, max_len: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut unused = Rng::seed_from_u64(0);
    for chunk in idx.chunks(64) {
        let (batch, _) = labeled_batch(set, chunk, language, max_len);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let h = vars.forward(&mut g, &batch, Mode::Eval, &mut unused)?;
        let rep = vars.sentence_representation(&mut g, h, batch.rows, batch.cols)?;
        let z = vars.classify(&mut g, rep)?;
        let logits = g.value(z);
        let c = model.classes;
        for r in 0..chunk.len() {
            let row = &logits.data()[r * c..(r + 1) * c];
            let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

pub fn accuracy(model: &ModelState<f32>, set: &LabeledSet, language: LanguageId, max_len: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(XlmError::Empty("evaluation set".into()));
    }
    let pred = predict(model, set, language, max_len)?;
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub losses: Vec<f32>,
}

/// Fine-tune on language A only, then score held-out A and never-seen B.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_transfer(
    pretrained: &ModelState<f32>,
    train_a: &LabeledSet,
    test_a: &LabeledSet,
    test_b: &LabeledSet,
    lang_a: LanguageId,
    lang_b: LanguageId,
    plan: &FinetunePlan,
) -> Result<TransferReport> {
    let labels = train_a.label_set();
    if test_a.label_set() != labels || test_b.label_set() != labels {
        return Err(XlmError::InvalidArgument("label sets differ between splits".into()));
    }
    let mut model = pretrained.clone();
    model.classes = 0;
    model.params.truncate(model.config.param_shapes(0).len());
    let losses = finetune_classifier(&mut model, train_a, lang_a, plan)?;
    Ok(TransferReport {
        accuracy_a: accuracy(&model, test_a, lang_a, plan.max_len)?,
        accuracy_b: accuracy(&model, test_b, lang_b, plan.max_len)?,
        losses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowResourceSetting {
    Alone,
    Distant,
    Related,
    Both,
}

impl LowResourceSetting {
    pub const ALL: [LowResourceSetting; 4] = [
        LowResourceSetting::Alone,
        LowResourceSetting::Distant,
        LowResourceSetting::Related,
        LowResourceSetting::Both,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LowResourceSetting::Alone => "low",
            LowResourceSetting::Distant => "low+distant",
            LowResourceSetting::Related => "low+related",
            LowResourceSetting::Both => "low+distant+related",
        }
    }
}

/// Corpora of the low-resource experiment, sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct LowResourceData {
    pub low_train: SentenceStore,
    pub low_valid: SentenceStore,
    pub distant: SentenceStore,
    pub related: SentenceStore,
}

fn relabel(store: &SentenceStore, language: LanguageId) -> Result<SentenceStore> {
    SentenceStore::new(language, store.sentences().to_vec())
}

/// Train one matched-size CLM on the low-resource corpus plus the helpers
/// of `setting`; returns the best held-out perplexity on the low language.
pub fn low_resource_run(
    data: &LowResourceData,
    setting: LowResourceSetting,
    config: &ModelConfig,
    plan: &TrainPlan,
) -> Result<f64> {
    let mut train = vec![relabel(&data.low_train, 0)?];
    let mut names = vec!["low".to_string()];
    let helpers: &[(&SentenceStore, &str)] = match setting {
        LowResourceSetting::Alone => &[],
        LowResourceSetting::Distant => &[(&data.distant, "distant")],
        LowResourceSetting::Related => &[(&data.related, "related")],
        LowResourceSetting::Both => &[(&data.distant, "distant"), (&data.related, "related")],
    };
    for (store, name) in helpers {
        if store.is_empty() {
            return Err(XlmError::Empty(format!("{name} helper corpus")));
        }
        train.push(relabel(store, train.len())?);
        names.push(name.to_string());
    }
    let mut valid = vec![None; train.len()];
    valid[0] = Some(relabel(&data.low_valid, 0)?);
    let td = TrainData {
        names,
        train,
        valid,
        parallel: Vec::new(),
    };
    let mut config = config.clone();
    config.languages = config.languages.max(3);
    let mut trainer = Trainer::new(plan.clone(), config, &td)?;
    let report = trainer.run()?;
    report
        .best_ppl
        .ok_or_else(|| XlmError::Empty("no evaluation happened".into()))
}

/// Four-row table: low alone, with the distant helper, with the related
/// helper, with both.
pub fn low_resource_ppl_experiment(
    data: &LowResourceData,
    config: &ModelConfig,
    plan: &TrainPlan,
) -> Result<Vec<(LowResourceSetting, f64)>> {
    LowResourceSetting::ALL
        .iter()
        .map(|&s| Ok((s, low_resource_run(data, s, config, plan)?)))
        .collect()
}
