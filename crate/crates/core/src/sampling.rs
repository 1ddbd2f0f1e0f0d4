//! Smoothed language sampling and frequency-based target weights.

use crate::corpus::{FrequencyTable, LanguageId};
use crate::error::{Result, XlmError};
use crate::rng::Rng;
use crate::subword::{is_special, TokenId};

pub const ALPHA_BPE: f64 = 0.5;
pub const ALPHA_TRAIN: f64 = 0.7;

/// Multinomial over languages with `q_i ∝ p_i^alpha`, `p_i = n_i / Σ n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageDistribution {
    alpha: f64,
    probs: Vec<f64>,
}

impl LanguageDistribution {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample(&self, rng: &mut Rng) -> LanguageId {
        sample_language(self, rng)
    }
}

pub fn language_probs(sizes: &[usize], alpha: f64) -> Result<LanguageDistribution> {
    if sizes.is_empty() {
        return Err(XlmError::Empty("no corpus sizes".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(XlmError::InvalidArgument(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    if let Some(i) = sizes.iter().position(|&n| n == 0) {
        return Err(XlmError::InvalidArgument(format!(
            "corpus {i} has size zero"
        )));
    }
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let smoothed: Vec<f64> = sizes
        .iter()
        .map(|&n| (n as f64 / total).powf(alpha))
        .collect();
    let z: f64 = smoothed.iter().sum();
    Ok(LanguageDistribution {
        alpha,
        probs: smoothed.into_iter().map(|s| s / z).collect(),
    })
}

/// Inverse-CDF draw from the categorical distribution.
pub fn sample_language(dist: &LanguageDistribution, rng: &mut Rng) -> LanguageId {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &q) in dist.probs.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    dist.probs.len() - 1
}

/// Per-token selection weight `1 / sqrt(count)`; specials and unseen
/// tokens weigh zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsampleWeights {
    weights: Vec<f64>,
}

impl SubsampleWeights {
    pub fn uniform(vocab_size: usize) -> Self {
        SubsampleWeights {
            weights: (0..vocab_size)
                .map(|i| if is_special(i as TokenId) { 0.0 } else { 1.0 })
                .collect(),
        }
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.weights.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

pub fn subsample_weights(freqs: &FrequencyTable, vocab_size: usize) -> SubsampleWeights {
    let weights = (0..vocab_size)
        .map(|i| {
            let c = freqs.get(i as TokenId);
            if is_special(i as TokenId) || c == 0 {
                0.0
            } else {
                1.0 / (c as f64).sqrt()
            }
        })
        .collect();
    SubsampleWeights { weights }
}

/// Draw `count` sentences for BPE learning: a language from the smoothed
/// distribution over corpus sizes, then a uniform sentence from it.
pub fn sample_sentences<'a, S: AsRef<str>>(
    corpora: &'a [Vec<S>],
    count: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<&'a str>> {
    let sizes: Vec<usize> = corpora.iter().map(Vec::len).collect();
    let dist = language_probs(&sizes, alpha)?;
    Ok((0..count)
        .map(|_| {
            let corpus = &corpora[dist.sample(rng)];
            corpus[rng.below(corpus.len())].as_ref()
        })
        .collect())
}
