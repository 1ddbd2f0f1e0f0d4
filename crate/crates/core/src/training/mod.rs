//! Adam training loop with objective alternation, held-out perplexity
//! stopping and checkpoints.

mod checkpoint;
mod optimizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optimizer::{
    adam_step, clip_global_norm, global_norm, lr_at, OptimizerState, ADAM_EPS, BETA1, BETA2,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{token_frequencies, ParallelStore, SentenceStore};
use crate::error::{Result, XlmError};
use crate::evaluation::{perplexity, PplObjective};
use crate::model::{Mode, ModelConfig, ModelState};
use crate::numerics::Graph;
use crate::objectives::{apply_mlm, apply_tlm, clm_targets, DEFAULT_MASK_RATE};
use crate::rng::Rng;
use crate::sampling::{language_probs, subsample_weights, LanguageDistribution, SubsampleWeights, ALPHA_TRAIN};
use crate::streams::{
    Batch, MonoBatcher, Objective, TlmBatcher, DEFAULT_BATCH_SIZE, DEFAULT_MAX_PAIR_LEN,
    DEFAULT_STREAM_LEN, DEFAULT_TOKEN_BUDGET,
};

pub const DEFAULT_PEAK_LR: f64 = 3e-4;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveSet {
    Clm,
    Mlm,
    MlmTlm,
}

impl FromStr for ObjectiveSet {
    type Err = XlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clm" => Ok(ObjectiveSet::Clm),
            "mlm" => Ok(ObjectiveSet::Mlm),
            "mlm+tlm" => Ok(ObjectiveSet::MlmTlm),
            _ => Err(XlmError::Config(format!(
                "objective must be clm, mlm or mlm+tlm, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for ObjectiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveSet::Clm => "clm",
            ObjectiveSet::Mlm => "mlm",
            ObjectiveSet::MlmTlm => "mlm+tlm",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub objectives: ObjectiveSet,
    pub max_steps: u64,
    pub warmup: u64,
    pub peak_lr: f64,
    pub eval_interval: u64,
    pub patience: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub stream_len: usize,
    pub token_budget: usize,
    pub max_pair_len: usize,
    pub alpha: f64,
    pub mask_rate: f64,
    pub clip: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            objectives: ObjectiveSet::Mlm,
            max_steps: 10_000,
            warmup: 1000,
            peak_lr: DEFAULT_PEAK_LR,
            eval_interval: 500,
            patience: 5,
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            stream_len: DEFAULT_STREAM_LEN,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_pair_len: DEFAULT_MAX_PAIR_LEN,
            alpha: ALPHA_TRAIN,
            mask_rate: DEFAULT_MASK_RATE,
            clip: DEFAULT_CLIP,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(XlmError::Config(m.to_string()));
        if self.warmup < 1 {
            return bad("warmup must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr < 1.0) {
            return bad("peak learning rate must lie in (0, 1)");
        }
        if self.eval_interval < 1 || self.batch_size < 1 || self.stream_len < 2 {
            return bad("eval_interval, batch_size and stream_len must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        Ok(())
    }

    /// `key = value` pairs, the same keys the run configuration uses.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("objective", self.objectives.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("warmup", self.warmup.to_string()),
            ("lr", self.peak_lr.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("stream_len", self.stream_len.to_string()),
            ("token_budget", self.token_budget.to_string()),
            ("max_pair_len", self.max_pair_len.to_string()),
            ("alpha", self.alpha.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("clip", self.clip.to_string()),
        ]
    }

    /// Apply one `key = value` setting; returns `false` for a key the plan
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| XlmError::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "objective" => self.objectives = value.parse()?,
            "max_steps" => self.max_steps = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "lr" => self.peak_lr = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "stream_len" => self.stream_len = num(key, value)?,
            "token_budget" => self.token_budget = num(key, value)?,
            "max_pair_len" => self.max_pair_len = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "mask_rate" => self.mask_rate = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Objective used at zero-based step `step`: strict MLM/TLM
    /// interleaving starting with MLM.
    pub fn objective_at(&self, step: u64) -> Objective {
        match self.objectives {
            ObjectiveSet::Clm => Objective::Clm,
            ObjectiveSet::Mlm => Objective::Mlm,
            ObjectiveSet::MlmTlm if step % 2 == 0 => Objective::Mlm,
            ObjectiveSet::MlmTlm => Objective::Tlm,
        }
    }

    fn ppl_objective(&self) -> PplObjective {
        match self.objectives {
            ObjectiveSet::Clm => PplObjective::Clm,
            _ => PplObjective::Mlm,
        }
    }
}

/// Stores for one run, indexed by language id.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub names: Vec<String>,
    pub train: Vec<SentenceStore>,
    /// Held-out data per language; languages without one are not scored.
    pub valid: Vec<Option<SentenceStore>>,
    pub parallel: Vec<ParallelStore>,
}

impl TrainData {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(XlmError::Empty("no training corpora".into()));
        }
        if self.names.len() != self.train.len() || self.valid.len() != self.train.len() {
            return Err(XlmError::Config("names, train and valid must align".into()));
        }
        for (i, s) in self.train.iter().enumerate() {
            if s.language() != i {
                return Err(XlmError::Config(format!(
                    "training store {i} carries language {}",
                    s.language()
                )));
            }
        }
        Ok(())
    }
}

/// Summary of one `run`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub steps: u64,
    pub losses: Vec<f32>,
    pub best_ppl: Option<f64>,
    pub evaluations: Vec<(u64, f64)>,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

pub struct Trainer<'a> {
    pub plan: TrainPlan,
    data: &'a TrainData,
    pub model: ModelState<f32>,
    pub opt: OptimizerState,
    rng: Rng,
    pub step: u64,
    mono: MonoBatcher,
    tlm: TlmBatcher,
    lang_dist: LanguageDistribution,
    pair_dist: Option<LanguageDistribution>,
    weights: SubsampleWeights,
    pub best: Option<(f64, ModelState<f32>)>,
    pub stale: u64,
    pub log: Vec<String>,
}

impl<'a> Trainer<'a> {
    /// Fresh model initialized from the plan seed.
    pub fn new(plan: TrainPlan, config: ModelConfig, data: &'a TrainData) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(plan.seed);
        let model = ModelState::init(config, &mut rng.split())?;
        Self::assemble(plan, model, data, rng)
    }

    /// Continue from an existing model (fresh optimizer).
    pub fn with_model(plan: TrainPlan, model: ModelState<f32>, data: &'a TrainData) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(plan.seed);
        rng.split();
        Self::assemble(plan, model, data, rng)
    }

    fn assemble(plan: TrainPlan, model: ModelState<f32>, data: &'a TrainData, rng: Rng) -> Result<Self> {
        plan.validate()?;
        data.validate()?;
        if plan.objectives == ObjectiveSet::MlmTlm && data.parallel.iter().all(|p| p.is_empty()) {
            return Err(XlmError::InvalidArgument("mlm+tlm requires parallel data".into()));
        }
        if model.config.languages < data.train.len() {
            return Err(XlmError::Config(format!(
                "model has {} language embeddings for {} corpora",
                model.config.languages,
                data.train.len()
            )));
        }
        if plan.stream_len > model.config.max_positions {
            return Err(XlmError::Config(format!(
                "stream_len {} exceeds max_positions {}",
                plan.stream_len, model.config.max_positions
            )));
        }
        let sizes: Vec<usize> = data.train.iter().map(SentenceStore::total_tokens).collect();
        let lang_dist = language_probs(&sizes, plan.alpha)?;
        let pair_dist = if data.parallel.is_empty() {
            None
        } else {
            let sizes: Vec<usize> = data.parallel.iter().map(|p| p.len().max(1)).collect();
            Some(language_probs(&sizes, plan.alpha)?)
        };
        let stores: Vec<&SentenceStore> = data.train.iter().collect();
        let weights = subsample_weights(&token_frequencies(&stores), model.config.vocab_size);
        let pairs: Vec<&ParallelStore> = data.parallel.iter().collect();
        let max_pair = plan.max_pair_len.min(model.config.max_positions * 2);
        Ok(Trainer {
            mono: MonoBatcher::new(data.train.len(), plan.batch_size, plan.stream_len),
            tlm: TlmBatcher::new(&pairs, plan.token_budget, max_pair),
            opt: OptimizerState::new(&model.params),
            plan,
            data,
            model,
            rng,
            step: 0,
            lang_dist,
            pair_dist,
            weights,
            best: None,
            stale: 0,
            log: Vec::new(),
        })
    }

    pub fn language_distribution(&self) -> &LanguageDistribution {
        &self.lang_dist
    }

    /// Pairs skipped per parallel store for exceeding the row limit.
    pub fn skipped_pairs(&self) -> &[usize] {
        &self.tlm.skipped
    }

    fn draw_batch(&mut self, objective: Objective, rng: &mut Rng) -> Result<Batch> {
        let stores: Vec<&SentenceStore> = self.data.train.iter().collect();
        match objective {
            Objective::Clm | Objective::Mlm => {
                Ok(self.mono.next_batch(&stores, &self.lang_dist, objective, rng))
            }
            Objective::Tlm => {
                let pairs: Vec<&ParallelStore> = self.data.parallel.iter().collect();
                let k = self.pair_dist.as_ref().map_or(0, |d| d.sample(rng));
                self.tlm.next_batch(&pairs, k, rng)
            }
        }
    }

    /// The batch with supervision attached, as step `self.step` would see it.
    fn prepared_batch(&mut self, rng: &mut Rng) -> Result<Batch> {
        let objective = self.plan.objective_at(self.step);
        let batch = self.draw_batch(objective, rng)?;
        Ok(match objective {
            Objective::Clm => clm_targets(&batch)?,
            Objective::Mlm => apply_mlm(&batch, &self.weights, self.plan.mask_rate, rng)?.0,
            Objective::Tlm => apply_tlm(&batch, &self.weights, self.plan.mask_rate, rng)?.0,
        })
    }

    /// One optimization step; returns the batch loss. A non-finite loss or
    /// gradient leaves parameters untouched and reports `NonFinite`.
    pub fn train_step(&mut self) -> Result<f32> {
        let mut rng = self.rng.split();
        let batch = self.prepared_batch(&mut rng)?;
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let loss = vars.lm_loss(&mut g, &batch, Mode::Train, &mut rng)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(XlmError::NonFinite(format!("loss at step {}", self.step + 1)));
        }
        g.backward(loss)?;
        let mut grads: Vec<Vec<f32>> = vars
            .vars
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        clip_global_norm(&mut grads, self.plan.clip);
        let lr = lr_at(self.opt.t + 1, self.plan.warmup, self.plan.peak_lr);
        adam_step(&mut self.model.params, &grads, &mut self.opt, lr)?;
        self.step += 1;
        Ok(value)
    }

    /// Held-out perplexity per scored language, logged, and the best-model
    /// bookkeeping. Returns `true` when patience is exhausted.
    pub fn evaluate(&mut self) -> Result<bool> {
        let objective = self.plan.ppl_objective();
        let mut total = 0.0;
        let mut scored = 0;
        for (i, v) in self.data.valid.iter().enumerate() {
            let Some(store) = v else { continue };
            let ppl = perplexity(&self.model, store, objective, self.plan.stream_len, self.plan.seed)?;
            self.log.push(format!(
                "step={} lang={} ppl={ppl:.4}",
                self.step, self.data.names[i]
            ));
            total += ppl;
            scored += 1;
        }
        if scored == 0 {
            return Ok(false);
        }
        let avg = total / scored as f64;
        self.log.push(format!("step={} avg_ppl={avg:.4}", self.step));
        let improved = self.best.as_ref().is_none_or(|(b, _)| avg < *b);
        if improved {
            self.best = Some((avg, self.model.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(self.stale >= self.plan.patience)
    }

    pub fn run(&mut self) -> Result<TrainReport> {
        self.run_with(&mut |_| {})
    }

    /// Train until `max_steps`, patience exhaustion or divergence; each new
    /// log line is passed to `on_log`.
    pub fn run_with(&mut self, on_log: &mut dyn FnMut(&str)) -> Result<TrainReport> {
        let mut report = TrainReport {
            steps: 0,
            losses: Vec::new(),
            best_ppl: None,
            evaluations: Vec::new(),
            stopped_early: false,
            diverged: None,
        };
        let mut evaluated_at = None;
        while self.step < self.plan.max_steps {
            match self.train_step() {
                Ok(l) => report.losses.push(l),
                Err(XlmError::NonFinite(m)) => {
                    report.diverged = Some(m);
                    break;
                }
                Err(e) => return Err(e),
            }
            if self.step % self.plan.eval_interval == 0 {
                let stop = self.logged_eval(&mut report, on_log)?;
                evaluated_at = Some(self.step);
                if stop {
                    report.stopped_early = true;
                    break;
                }
            }
        }
        if report.diverged.is_none() && evaluated_at != Some(self.step) && self.step > 0 {
            self.logged_eval(&mut report, on_log)?;
        }
        report.steps = self.step;
        report.best_ppl = self.best.as_ref().map(|(p, _)| *p);
        Ok(report)
    }

    fn logged_eval(&mut self, report: &mut TrainReport, on_log: &mut dyn FnMut(&str)) -> Result<bool> {
        let before = self.log.len();
        let stop = self.evaluate()?;
        for line in &self.log[before..] {
            on_log(line);
        }
        if let Some((p, _)) = &self.best {
            if self.stale == 0 {
                report.evaluations.push((self.step, *p));
            }
        }
        Ok(stop)
    }

    /// The retained best model, or the current one if nothing was scored.
    pub fn best_model(&self) -> &ModelState<f32> {
        self.best.as_ref().map_or(&self.model, |(_, m)| m)
    }

    pub fn into_best_model(self) -> ModelState<f32> {
        match self.best {
            Some((_, m)) => m,
            None => self.model,
        }
    }

    fn pipeline_words(&self) -> Vec<u64> {
        let mono = self.mono.state_words();
        let tlm = self.tlm.state_words();
        let mut w = vec![mono.len() as u64];
        w.extend(mono);
        w.push(tlm.len() as u64);
        w.extend(tlm);
        w.push(self.best.as_ref().map_or(f64::INFINITY, |(p, _)| *p).to_bits());
        w.push(self.stale);
        w
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            plan: self.plan.clone(),
            names: self.data.names.clone(),
            opt: self.opt.clone(),
            step: self.step,
            rng: self.rng.state(),
            pipeline: self.pipeline_words(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.checkpoint(), path)
    }

    /// Rebuild a trainer that continues exactly where `ck` left off. The
    /// retained best model restarts from the restored weights.
    pub fn resume(ck: Checkpoint, data: &'a TrainData) -> Result<Self> {
        let Checkpoint {
            model,
            plan,
            opt,
            step,
            rng,
            pipeline,
            ..
        } = ck;
        let mut t = Self::assemble(plan, model, data, Rng::from_state(&rng))?;
        if opt.m.len() != t.model.params.len() {
            return Err(XlmError::Checkpoint("optimizer does not match parameters".into()));
        }
        t.opt = opt;
        t.step = step;
        let err = || XlmError::Checkpoint("pipeline record".into());
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u64]> {
            let s = pipeline.get(at..at + n).ok_or_else(err)?;
            at += n;
            Ok(s)
        };
        let n = take(1)?[0] as usize;
        t.mono.restore(take(n)?)?;
        let n = take(1)?[0] as usize;
        t.tlm.restore(take(n)?)?;
        let best = f64::from_bits(take(1)?[0]);
        t.stale = take(1)?[0];
        if best.is_finite() {
            t.best = Some((best, t.model.clone()));
        }
        Ok(t)
    }
}
