//! Supervision for causal, masked and translation language modeling.

use std::ops::AddAssign;

use crate::error::{Result, XlmError};
use crate::rng::Rng;
use crate::sampling::SubsampleWeights;
use crate::streams::{AttentionMode, Batch, Objective, IGNORE};
use crate::subword::{TokenId, BOS, EOS, MASK, NUM_SPECIAL, PAD};

pub const DEFAULT_MASK_RATE: f64 = 0.15;
pub const MASK_PROB: f64 = 0.8;
pub const RANDOM_PROB: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorruptionReport {
    pub selected: usize,
    pub masked: usize,
    pub randomized: usize,
    pub kept: usize,
    pub eligible: usize,
    /// Rows that had nothing to select.
    pub empty_rows: usize,
}

impl AddAssign for CorruptionReport {
    fn add_assign(&mut self, o: Self) {
        self.selected += o.selected;
        self.masked += o.masked;
        self.randomized += o.randomized;
        self.kept += o.kept;
        self.eligible += o.eligible;
        self.empty_rows += o.empty_rows;
    }
}

fn eligible(token: TokenId, real: bool, weights: &SubsampleWeights) -> bool {
    real && !matches!(token, PAD | BOS | EOS | MASK) && weights.get(token) > 0.0
}

/// Corrupt one row in place.
///
/// Selects `round(rate * eligible)` cells without replacement, with
/// probability proportional to their subsampling weight (exponential-key
/// sampling: key = ln(u) / w, keep the largest). Selected cells become
/// MASK, a uniform non-special token, or stay unchanged with probabilities
/// 0.8 / 0.1 / 0.1.
pub fn corrupt_row(
    tokens: &mut [TokenId],
    targets: &mut [i32],
    real: &[bool],
    weights: &SubsampleWeights,
    rate: f64,
    rng: &mut Rng,
) -> CorruptionReport {
    targets.fill(IGNORE);
    let mut keyed: Vec<(f64, usize)> = tokens
        .iter()
        .zip(real)
        .enumerate()
        .filter(|(_, (&t, &m))| eligible(t, m, weights))
        .map(|(i, (&t, _))| {
            let u = 1.0 - rng.next_f64();
            (u.ln() / weights.get(t), i)
        })
        .collect();
    let mut report = CorruptionReport {
        eligible: keyed.len(),
        ..Default::default()
    };
    if keyed.is_empty() {
        report.empty_rows = 1;
        return report;
    }
    let k = (rate * keyed.len() as f64).round() as usize;
    if k == 0 {
        return report;
    }
    let by_key = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, by_key);
        keyed.truncate(k);
    }
    let mut chosen: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    chosen.sort_unstable();

    let vocab = weights.len();
    for i in chosen {
        targets[i] = tokens[i] as i32;
        report.selected += 1;
        let r = rng.next_f64();
        if r < MASK_PROB {
            tokens[i] = MASK;
            report.masked += 1;
        } else if r < MASK_PROB + RANDOM_PROB && vocab > NUM_SPECIAL {
            tokens[i] = (NUM_SPECIAL + rng.below(vocab - NUM_SPECIAL)) as TokenId;
            report.randomized += 1;
        } else {
            report.kept += 1;
        }
    }
    report
}

fn corrupt_batch(
    batch: &Batch,
    weights: &SubsampleWeights,
    rate: f64,
    rng: &mut Rng,
) -> (Batch, CorruptionReport) {
    let mut out = batch.clone();
    let mut report = CorruptionReport::default();
    let cols = batch.cols;
    for r in 0..batch.rows {
        let mut row_rng = rng.split();
        let span = r * cols..(r + 1) * cols;
        report += corrupt_row(
            &mut out.tokens[span.clone()],
            &mut out.targets[span.clone()],
            &batch.pad_mask[span],
            weights,
            rate,
            &mut row_rng,
        );
    }
    (out, report)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(XlmError::InvalidArgument(format!("mask rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Masked-LM corruption; each row draws from its own split generator.
pub fn apply_mlm(
    batch: &Batch,
    weights: &SubsampleWeights,
    rate: f64,
    rng: &mut Rng,
) -> Result<(Batch, CorruptionReport)> {
    if !matches!(batch.objective, Objective::Mlm | Objective::Tlm) {
        return Err(XlmError::InvalidArgument(format!(
            "masking needs an MLM or TLM batch, got {:?}",
            batch.objective
        )));
    }
    check_rate(rate)?;
    Ok(corrupt_batch(batch, weights, rate, rng))
}

/// Translation-LM corruption: both segments of each row are masked jointly.
pub fn apply_tlm(
    batch: &Batch,
    weights: &SubsampleWeights,
    rate: f64,
    rng: &mut Rng,
) -> Result<(Batch, CorruptionReport)> {
    if batch.objective != Objective::Tlm {
        return Err(XlmError::InvalidArgument(format!(
            "apply_tlm needs a TLM batch, got {:?}",
            batch.objective
        )));
    }
    check_rate(rate)?;
    Ok(corrupt_batch(batch, weights, rate, rng))
}

/// Next-token targets: `targets[t] = tokens[t + 1]` inside each row.
pub fn clm_targets(batch: &Batch) -> Result<Batch> {
    if batch.objective != Objective::Clm || batch.attention != AttentionMode::Causal {
        return Err(XlmError::InvalidArgument(
            "clm_targets needs a causal CLM batch".into(),
        ));
    }
    let mut out = batch.clone();
    let cols = batch.cols;
    for r in 0..batch.rows {
        for c in 0..cols {
            let i = r * cols + c;
            out.targets[i] = if c + 1 < cols && batch.pad_mask[i] && batch.pad_mask[i + 1] {
                batch.tokens[i + 1] as i32
            } else {
                IGNORE
            };
        }
    }
    Ok(out)
}
