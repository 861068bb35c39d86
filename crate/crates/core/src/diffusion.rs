//! Masked diffusion over identifier tokens: forward corruption, re-mask
//! accounting for the reverse process, and the training-loss estimator.
//!
//! Nothing here depends on the model. The denoiser consumes
//! [`sample_training_mask`] during training and the sampler consumes
//! [`remask_count`] and [`time_grid`] during generation.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::Vocabulary;
use crate::{Error, Result, TokenId};

/// A diffusion time `t` in `(0, 1]`: the per-token masking probability.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub const ONE: NoiseLevel = NoiseLevel(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t <= 1.0 {
            Ok(Self(t))
        } else {
            Err(Error::InvalidArgument(format!("noise level {t} not in (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Identifier tokens with some positions replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    tokens: Vec<TokenId>,
}

impl MaskedSequence {
    pub fn all_masked(len: usize) -> Self {
        Self { tokens: alloc::vec![Vocabulary::MASK; len] }
    }

    pub fn from_tokens(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.tokens[i] == Vocabulary::MASK
    }

    pub fn mask_flags(&self) -> Vec<bool> {
        self.tokens.iter().map(|&t| t == Vocabulary::MASK).collect()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_masked(i)).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == Vocabulary::MASK).count()
    }

    pub fn mask(&mut self, i: usize) {
        self.tokens[i] = Vocabulary::MASK;
    }

    /// Commits `token` at position `i`.
    pub fn reveal(&mut self, i: usize, token: TokenId) {
        debug_assert_ne!(token, Vocabulary::MASK);
        self.tokens[i] = token;
    }
}

/// Independently masks each position of `x0` with probability `t`.
///
/// `t = 0` is accepted and returns `x0` unchanged, even if it already holds
/// MASK tokens.
pub fn forward_mask<R: Rng + ?Sized>(x0: &[TokenId], t: f64, rng: &mut R) -> MaskedSequence {
    debug_assert!(t == 0.0 || !x0.contains(&Vocabulary::MASK), "clean sequence contains MASK");
    debug_assert!((0.0..=1.0).contains(&t));
    let tokens = x0
        .iter()
        .map(|&tok| if t >= 1.0 || rng.gen::<f64>() < t { Vocabulary::MASK } else { tok })
        .collect();
    MaskedSequence { tokens }
}

/// Deterministic re-mask counts for one reverse step from `t_from` to `t_to`
/// over `len` positions: `(finalize_now, remain_masked)`.
///
/// `remain_masked = round(len * t_to)` and `finalize_now` is the drop from
/// `round(len * t_from)`, so the expected re-mask proportion `t_to / t_from`
/// is met exactly and counts telescope to `len` over any grid from 1 to 0.
pub fn remask_count(len: usize, t_from: f64, t_to: f64) -> (usize, usize) {
    assert!(0.0 <= t_to && t_to < t_from && t_from <= 1.0, "need 0 <= t_to < t_from <= 1");
    let remain = libm::round(len as f64 * t_to) as usize;
    let before = libm::round(len as f64 * t_from) as usize;
    (before.saturating_sub(remain), remain)
}

/// Uniform time grid `t_k = (steps - k) / steps`, `k = 0..=steps`.
pub fn time_grid(steps: usize) -> Vec<f64> {
    assert!(steps >= 1);
    (0..=steps).map(|k| (steps - k) as f64 / steps as f64).collect()
}

/// A mask pattern for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMask {
    pub t: f64,
    /// Masked positions, ascending; never empty.
    pub positions: Vec<usize>,
    /// Multiplier on the summed negative log-likelihood of masked positions.
    pub weight: f64,
}

/// Draws `t ~ U(0, 1]` and a mask pattern conditioned on at least one masked
/// position.
///
/// Drawing from the conditional directly is the same as redrawing the pattern
/// until something is masked. The weight is `P(any masked | t) / t` instead of
/// `1 / t`, which keeps the estimate unbiased for the integral bound despite
/// the conditioning, and finite as `t -> 0`.
pub fn sample_training_mask<R: Rng + ?Sized>(len: usize, rng: &mut R) -> TrainingMask {
    assert!(len >= 1, "empty identifier");
    let t = 1.0 - rng.gen::<f64>();
    let p_any = -libm::expm1(len as f64 * libm::log1p(-t));
    let p_any = if t >= 1.0 { 1.0 } else { p_any };
    // First masked index j has P(j) proportional to (1 - t)^j t.
    let u = rng.gen::<f64>() * p_any;
    let mut first = len - 1;
    for j in 0..len {
        let cdf = -libm::expm1((j + 1) as f64 * libm::log1p(-t));
        if t >= 1.0 || u < cdf {
            first = j;
            break;
        }
    }
    let mut positions = alloc::vec![first];
    for j in first + 1..len {
        if rng.gen::<f64>() < t {
            positions.push(j);
        }
    }
    TrainingMask { t, positions, weight: p_any / t }
}

/// Derivative of the loss with respect to `log p(token)` at `position`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbGradient {
    pub position: usize,
    pub token: TokenId,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub loss: f64,
    pub mask: TrainingMask,
    pub gradients: Vec<LogProbGradient>,
}

const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// One-sample estimate of the masked-diffusion negative log-likelihood bound
/// for identifier `x0` given condition tokens.
///
/// Only identifier positions are ever masked; the condition is passed through
/// untouched. `predict` returns one distribution over the vocabulary per
/// identifier position and is never told the noise level.
pub fn loss_estimate<R, F>(x0: &[TokenId], condition: &[TokenId], mut predict: F, rng: &mut R) -> Result<LossEstimate>
where
    R: Rng + ?Sized,
    F: FnMut(&[TokenId], &MaskedSequence) -> Vec<Vec<f64>>,
{
    if x0.is_empty() {
        return Err(Error::InvalidArgument("empty identifier".into()));
    }
    let mask = sample_training_mask(x0.len(), rng);
    let mut noisy = MaskedSequence::from_tokens(x0.to_vec());
    for &i in &mask.positions {
        noisy.mask(i);
    }
    let dists = predict(condition, &noisy);
    if dists.len() != x0.len() {
        return Err(Error::DimensionMismatch { expected: x0.len(), got: dists.len() });
    }
    for (position, row) in dists.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::NotNormalized { position, sum });
        }
    }
    let mut loss = 0.0;
    let mut gradients = Vec::with_capacity(mask.positions.len());
    for &i in &mask.positions {
        let p = dists[i][x0[i] as usize];
        loss -= mask.weight * libm::log(p);
        gradients.push(LogProbGradient { position: i, token: x0[i], coefficient: -mask.weight });
    }
    Ok(LossEstimate { loss, mask, gradients })
}
