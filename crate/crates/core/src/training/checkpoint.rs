//! Binary checkpoint: magic, version, body length, body, SHA-256 digest.
//!
//! Body layout (little-endian): config block as `key = value` text, named
//! parameter records (name, shape, f32 data), optimizer record (t, betas,
//! eps, first and second moments), step, generator state, pipeline words.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainPlan};
use crate::error::{Result, XlmError};
use crate::model::{ModelConfig, ModelState};
use crate::numerics::Tensor;
use crate::rng::RngState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"XLMCKPT\0";
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState<f32>,
    pub plan: TrainPlan,
    pub names: Vec<String>,
    pub opt: OptimizerState,
    pub step: u64,
    pub rng: RngState,
    /// Data-pipeline position and stopping bookkeeping.
    pub pipeline: Vec<u64>,
}

impl Checkpoint {
    /// Checkpoint of a model with a fresh optimizer and no run history.
    pub fn fresh(model: ModelState<f32>, plan: TrainPlan, names: Vec<String>) -> Self {
        let opt = OptimizerState::new(&model.params);
        let rng = crate::rng::Rng::seed_from_u64(plan.seed).state();
        Checkpoint {
            model,
            plan,
            names,
            opt,
            step: 0,
            rng,
            pipeline: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        put_bytes(&mut body, config_block(self).as_bytes());
        let names = self.model.names();
        put_u32(&mut body, names.len() as u32);
        for (name, p) in names.iter().zip(&self.model.params) {
            put_bytes(&mut body, name.as_bytes());
            put_u32(&mut body, p.shape().len() as u32);
            for &d in p.shape() {
                put_u64(&mut body, d as u64);
            }
            put_f32s(&mut body, p.data());
        }
        let o = &self.opt;
        put_u64(&mut body, o.t);
        for x in [o.beta1, o.beta2, o.eps] {
            body.extend_from_slice(&x.to_le_bytes());
        }
        put_u32(&mut body, o.m.len() as u32);
        for (m, v) in o.m.iter().zip(&o.v) {
            put_f32s(&mut body, m);
            put_f32s(&mut body, v);
        }
        put_u64(&mut body, self.step);
        body.extend_from_slice(&self.rng.to_bytes());
        put_u32(&mut body, self.pipeline.len() as u32);
        for &w in &self.pipeline {
            put_u64(&mut body, w);
        }

        let mut out = Vec::with_capacity(HEADER + body.len() + DIGEST);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u64(&mut out, body.len() as u64);
        out.extend_from_slice(&body);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Validates magic, version, length and digest before parsing anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| XlmError::Checkpoint(m.to_string());
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!(
                "version mismatch: file {version}, supported {CHECKPOINT_VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let end = HEADER.checked_add(len).ok_or_else(|| bad("truncated file"))?;
        if bytes.len() < end + DIGEST {
            return Err(bad("truncated file"));
        }
        if bytes.len() > end + DIGEST {
            return Err(bad("trailing bytes after digest"));
        }
        if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
            return Err(bad("digest mismatch"));
        }
        Reader {
            buf: &bytes[HEADER..end],
            at: 0,
        }
        .checkpoint()
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_bytes()).map_err(|e| XlmError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| XlmError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn config_block(ck: &Checkpoint) -> String {
    let c = &ck.model.config;
    let mut lines = vec![
        format!("vocab_size = {}", c.vocab_size),
        format!("dim = {}", c.dim),
        format!("heads = {}", c.heads),
        format!("layers = {}", c.layers),
        format!("max_positions = {}", c.max_positions),
        format!("languages = {}", c.languages),
        format!("dropout = {}", c.dropout),
        format!("classes = {}", ck.model.classes),
        format!("language_names = {}", ck.names.join(",")),
    ];
    lines.extend(ck.plan.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}")));
    lines.join("\n") + "\n"
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    put_u64(out, xs.len() as u64);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.at..self.at.saturating_add(n))
            .ok_or_else(|| XlmError::Checkpoint("record runs past the body".into()))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| XlmError::Checkpoint("size".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn checkpoint(mut self) -> Result<Checkpoint> {
        let bad = |m: String| XlmError::Checkpoint(m);
        let text = std::str::from_utf8(self.bytes()?).map_err(|_| bad("config block is not UTF-8".into()))?;
        let mut config = ModelConfig::desk(1, 1);
        let mut plan = TrainPlan::default();
        let mut classes = 0usize;
        let mut names = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("config line {line:?}")))?;
            let parse_err = || bad(format!("config value {v:?} for {k}"));
            let n = || v.parse::<usize>().map_err(|_| parse_err());
            match k {
                "vocab_size" => config.vocab_size = n()?,
                "dim" => config.dim = n()?,
                "heads" => config.heads = n()?,
                "layers" => config.layers = n()?,
                "max_positions" => config.max_positions = n()?,
                "languages" => config.languages = n()?,
                "dropout" => config.dropout = v.parse().map_err(|_| parse_err())?,
                "classes" => classes = n()?,
                "language_names" => {
                    names = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                }
                _ => {
                    if !plan.set(k, v)? {
                        return Err(bad(format!("unknown config key {k}")));
                    }
                }
            }
        }
        let want = config.param_names(classes);
        let count = self.u32()? as usize;
        if count != want.len() {
            return Err(bad(format!("{count} parameter records, expected {}", want.len())));
        }
        let mut params = Vec::with_capacity(count);
        for name in &want {
            let got = std::str::from_utf8(self.bytes()?).map_err(|_| bad("parameter name".into()))?;
            if got != name {
                return Err(bad(format!("parameter {got:?} where {name:?} expected")));
            }
            let ndim = self.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = self.f32s()?;
            params.push(Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?);
        }
        let model = ModelState::from_params(config, classes, params)?;
        let t = self.u64()?;
        let (beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?);
        let slots = self.u32()? as usize;
        if slots != model.params.len() {
            return Err(bad("optimizer record does not match parameters".into()));
        }
        let mut m = Vec::with_capacity(slots);
        let mut v = Vec::with_capacity(slots);
        for p in &model.params {
            let (mi, vi) = (self.f32s()?, self.f32s()?);
            if mi.len() != p.len() || vi.len() != p.len() {
                return Err(bad("optimizer moment size".into()));
            }
            m.push(mi);
            v.push(vi);
        }
        let step = self.u64()?;
        let rng = RngState::from_bytes(self.take(RngState::BYTES)?.try_into().unwrap());
        let n = self.u32()? as usize;
        let pipeline = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        if self.at != self.buf.len() {
            return Err(bad("unread bytes in body".into()));
        }
        Ok(Checkpoint {
            model,
            plan,
            names,
            opt: OptimizerState {
                m,
                v,
                t,
                beta1,
                beta2,
                eps,
            },
            step,
            rng,
            pipeline,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 9,
            dim: 4,
            heads: 2,
            layers: 1,
            max_positions: 8,
            languages: 2,
            dropout: 0.1,
        };
        let mut rng = Rng::seed_from_u64(3);
        let mut model = ModelState::<f32>::init(cfg, &mut rng).unwrap();
        model.attach_classifier(2, &mut rng).unwrap();
        let mut ck = Checkpoint::fresh(model, TrainPlan::default(), vec!["a".into(), "b".into()]);
        ck.opt.t = 7;
        ck.opt.m[0][1] = 0.25;
        ck.step = 7;
        ck.pipeline = vec![1, 2, u64::MAX];
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected_before_parsing() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[HEADER + 40] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("digest"));
        let cut = &bytes[..bytes.len() - 5];
        assert!(Checkpoint::from_bytes(cut).unwrap_err().to_string().contains("truncated"));
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(Checkpoint::from_bytes(&ver).unwrap_err().to_string().contains("version"));
        let mut magic = bytes;
        magic[0] = b'Y';
        assert!(Checkpoint::from_bytes(&magic).unwrap_err().to_string().contains("magic"));
    }
}
