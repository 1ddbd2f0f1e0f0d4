//! Flat `key = value` run configuration shared by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, XlmError};
use crate::evaluation::FinetunePlan;
use crate::model::ModelConfig;
use crate::synthetic::SyntheticConfig;
use crate::training::TrainPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Text,
    Int,
    Real,
    /// A single file or directory path.
    Path,
    /// `name=path,name=path`
    NamedPaths,
    /// `src-tgt=src_path:tgt_path,...`
    PairPaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    General,
    Bpe,
    Data,
    Model,
    Plan,
    Eval,
    Finetune,
    Synthetic,
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub group: Group,
    pub help: &'static str,
}

const fn spec(key: &'static str, default: &'static str, kind: Kind, group: Group, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        default,
        kind,
        group,
        help,
    }
}

use Group as G;
use Kind as K;

pub const KEYS: &[KeySpec] = &[
    spec("seed", "0", K::Int, G::General, "seed for every random choice"),
    spec("input", "", K::Path, G::General, "input text file"),
    spec("output", "", K::Path, G::General, "output file or directory"),
    spec("codes", "", K::Path, G::General, "BPE codes file; empty means whole-word tokens"),
    spec("vocab", "", K::Path, G::General, "vocabulary file"),
    spec("checkpoint", "", K::Path, G::General, "checkpoint file"),
    spec("num_merges", "1000", K::Int, G::Bpe, "number of BPE merge operations"),
    spec("alpha_bpe", "0.5", K::Real, G::Bpe, "language smoothing exponent for the BPE sample"),
    spec("bpe_sentences", "100000", K::Int, G::Bpe, "sentences drawn for BPE learning"),
    spec("min_count", "1", K::Int, G::Bpe, "minimum count for a vocabulary entry"),
    spec("train", "", K::NamedPaths, G::Data, "training corpora as lang=path,lang=path"),
    spec("valid", "", K::NamedPaths, G::Data, "held-out corpora as lang=path,..."),
    spec("parallel", "", K::PairPaths, G::Data, "parallel corpora as src-tgt=src_path:tgt_path,..."),
    spec("dim", "64", K::Int, G::Model, "model width"),
    spec("heads", "4", K::Int, G::Model, "attention heads"),
    spec("layers", "2", K::Int, G::Model, "Transformer layers"),
    spec("max_positions", "256", K::Int, G::Model, "learned position embeddings"),
    spec("dropout", "0.1", K::Real, G::Model, "dropout probability"),
    spec("objective", "mlm", K::Text, G::Plan, "clm, mlm or mlm+tlm"),
    spec("max_steps", "10000", K::Int, G::Plan, "maximum optimizer steps"),
    spec("warmup", "1000", K::Int, G::Plan, "linear warm-up steps"),
    spec("lr", "0.0003", K::Real, G::Plan, "peak learning rate"),
    spec("eval_interval", "500", K::Int, G::Plan, "steps between held-out evaluations"),
    spec("patience", "5", K::Int, G::Plan, "evaluations without improvement before stopping"),
    spec("batch_size", "64", K::Int, G::Plan, "streams per CLM/MLM batch"),
    spec("stream_len", "256", K::Int, G::Plan, "tokens per stream"),
    spec("token_budget", "4000", K::Int, G::Plan, "tokens per TLM batch"),
    spec("max_pair_len", "512", K::Int, G::Plan, "longest TLM pair kept"),
    spec("alpha_train", "0.7", K::Real, G::Plan, "language smoothing exponent for batches"),
    spec("mask_rate", "0.15", K::Real, G::Plan, "fraction of tokens selected for prediction"),
    spec("clip", "5.0", K::Real, G::Plan, "global gradient-norm bound"),
    spec("resume", "", K::Path, G::Plan, "checkpoint to continue training from"),
    spec("best", "", K::Path, G::Plan, "where to write the best model"),
    spec("log", "", K::Path, G::Plan, "metrics log file"),
    spec("ppl_objective", "auto", K::Text, G::Eval, "clm, mlm, or auto (from the checkpoint)"),
    spec("dict", "", K::Path, G::Eval, "translation dictionary, src<TAB>tgt"),
    spec("gold", "", K::Path, G::Eval, "word-similarity gold, w1<TAB>w2<TAB>score"),
    spec("cls_train", "", K::NamedPaths, G::Finetune, "labeled training set as lang=path"),
    spec("cls_test", "", K::NamedPaths, G::Finetune, "labeled test sets as lang=path,..."),
    spec("ft_steps", "300", K::Int, G::Finetune, "fine-tuning steps"),
    spec("ft_batch", "32", K::Int, G::Finetune, "fine-tuning batch size"),
    spec("ft_lr", "0.0001", K::Real, G::Finetune, "fine-tuning peak learning rate"),
    spec("ft_warmup", "30", K::Int, G::Finetune, "fine-tuning warm-up steps"),
    spec("ft_max_len", "64", K::Int, G::Finetune, "longest classified sentence"),
    spec("syn_vocab", "200", K::Int, G::Synthetic, "token types per synthetic language"),
    spec("syn_sentences", "20000", K::Int, G::Synthetic, "monolingual sentences per language"),
    spec("syn_valid", "500", K::Int, G::Synthetic, "held-out sentences per language"),
    spec("syn_test", "500", K::Int, G::Synthetic, "test sentences per language"),
    spec("syn_parallel", "5000", K::Int, G::Synthetic, "parallel sentence pairs"),
    spec("syn_classify", "1000", K::Int, G::Synthetic, "labeled sentences per split"),
    spec("syn_mode", "cipher", K::Text, G::Synthetic, "cipher or independent"),
    spec("anchor_fraction", "0.1", K::Real, G::Synthetic, "share of types spelled identically"),
    spec("syn_classes", "10", K::Int, G::Synthetic, "grammar word classes"),
    spec("syn_min_len", "6", K::Int, G::Synthetic, "shortest sentence"),
    spec("syn_max_len", "16", K::Int, G::Synthetic, "longest sentence"),
    spec("syn_topic_boost", "4.0", K::Real, G::Synthetic, "weight of topic words"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Settings for one command; every path is absolute once set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| (k.key, k.default.to_string())).collect(),
        }
    }
}

fn config_err(msg: String) -> XlmError {
    XlmError::Config(msg)
}

fn absolute(raw: &str, base: &Path) -> String {
    let p = Path::new(raw);
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    joined.to_string_lossy().into_owned()
}

fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn resolve(spec: &KeySpec, raw: &str, base: &Path) -> Result<String> {
    let bad = |m: &str| config_err(format!("{}: {m}, got {raw:?}", spec.key));
    match spec.kind {
        K::Text => Ok(raw.to_string()),
        K::Int => raw.parse::<u64>().map(|_| raw.to_string()).map_err(|_| bad("expected a non-negative integer")),
        K::Real => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(raw.to_string()),
            _ => Err(bad("expected a finite number")),
        },
        K::Path if raw.is_empty() => Ok(String::new()),
        K::Path => Ok(absolute(raw, base)),
        K::NamedPaths => {
            let mut out = Vec::new();
            for item in split_list(raw) {
                let (name, path) = item.split_once('=').ok_or_else(|| bad("expected lang=path"))?;
                if name.is_empty() || path.is_empty() {
                    return Err(bad("expected lang=path"));
                }
                out.push(format!("{name}={}", absolute(path, base)));
            }
            Ok(out.join(","))
        }
        K::PairPaths => {
            let mut out = Vec::new();
            for item in split_list(raw) {
                let (pair, paths) = item.split_once('=').ok_or_else(|| bad("expected src-tgt=src:tgt"))?;
                let (s, t) = paths.split_once(':').ok_or_else(|| bad("expected src-tgt=src:tgt"))?;
                if !matches!(pair.split_once('-'), Some((a, b)) if !a.is_empty() && !b.is_empty()) {
                    return Err(bad("expected src-tgt=src:tgt"));
                }
                out.push(format!("{pair}={}:{}", absolute(s, base), absolute(t, base)));
            }
            Ok(out.join(","))
        }
    }
}

/// One parallel corpus from the `parallel` key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelSpec {
    pub source: String,
    pub target: String,
    pub source_path: PathBuf,
    pub target_path: PathBuf,
}

impl RunConfig {
    /// Set `key`; relative paths are taken relative to `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let spec = key_spec(key).ok_or_else(|| config_err(format!("unknown key {key:?}")))?;
        let value = resolve(spec, value.trim(), base)?;
        self.values.insert(spec.key, value);
        Ok(())
    }

    /// Parse a config file body. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| XlmError::Format {
                what: "config",
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            self.set(k.trim(), v, base)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| XlmError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base).map_err(|e| XlmError::io(base, e))?;
        self.apply_text(&text, &base)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("no config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| config_err(format!("bad value {raw:?} for {key}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.raw(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| config_err(format!("{key} is required")))
    }

    /// `(name, path)` entries of a `lang=path` list.
    pub fn named_paths(&self, key: &str) -> Vec<(String, PathBuf)> {
        split_list(self.raw(key))
            .filter_map(|item| item.split_once('='))
            .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
            .collect()
    }

    pub fn parallel_specs(&self, key: &str) -> Vec<ParallelSpec> {
        split_list(self.raw(key))
            .filter_map(|item| {
                let (pair, paths) = item.split_once('=')?;
                let (s, t) = pair.split_once('-')?;
                let (sp, tp) = paths.split_once(':')?;
                Some(ParallelSpec {
                    source: s.to_string(),
                    target: t.to_string(),
                    source_path: sp.into(),
                    target_path: tp.into(),
                })
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn model_config(&self, vocab_size: usize, languages: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            vocab_size,
            dim: self.get("dim")?,
            heads: self.get("heads")?,
            layers: self.get("layers")?,
            max_positions: self.get("max_positions")?,
            languages,
            dropout: self.get("dropout")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_plan(&self) -> Result<TrainPlan> {
        let mut plan = TrainPlan::default();
        for spec in KEYS.iter().filter(|k| k.group == G::Plan) {
            let key = match spec.key {
                "alpha_train" => "alpha",
                k => k,
            };
            plan.set(key, self.raw(spec.key))?;
        }
        plan.seed = self.seed()?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn finetune_plan(&self) -> Result<FinetunePlan> {
        Ok(FinetunePlan {
            steps: self.get("ft_steps")?,
            batch_size: self.get("ft_batch")?,
            peak_lr: self.get("ft_lr")?,
            warmup: self.get("ft_warmup")?,
            max_len: self.get("ft_max_len")?,
            seed: self.seed()?,
            ..FinetunePlan::default()
        })
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        let c = SyntheticConfig {
            vocab_size: self.get("syn_vocab")?,
            sentences: self.get("syn_sentences")?,
            valid: self.get("syn_valid")?,
            test: self.get("syn_test")?,
            parallel: self.get("syn_parallel")?,
            classify: self.get("syn_classify")?,
            mode: self.get("syn_mode")?,
            anchor_fraction: self.get("anchor_fraction")?,
            seed: self.seed()?,
            classes: self.get("syn_classes")?,
            min_len: self.get("syn_min_len")?,
            max_len: self.get("syn_max_len")?,
            topic_boost: self.get("syn_topic_boost")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// The configuration as a config-file body.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.key, self.raw(k.key)))
            .collect()
    }
}
