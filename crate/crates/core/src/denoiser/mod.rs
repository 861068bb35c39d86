//! Bidirectional transformer denoiser `p(x0_i | query, masked identifier)`.
//!
//! The input is `[query ; SEP ; identifier slots]` with full (non-causal)
//! attention. Query tokens take positions `0..q`, SEP takes position
//! `max_query_len` and slot `j` takes `max_query_len + 1 + j`, so slot
//! positions do not shift with query length. There is no time input: the
//! prediction depends only on which tokens are visible.
//!
//! Parameters live in one flat buffer described by [`ParamLayout`]; the
//! gradient buffer and optimizer moments share that layout.

mod model;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::diffusion::{MaskedSequence, TrainingMask};
use crate::{Error, Result, TokenId};

pub use model::Gradients;
pub use train::{train, EpochReport, OptimizerState, TrainConfig, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_query_len: usize,
    pub docid_len: usize,
    pub vocab_size: usize,
}

impl DenoiserConfig {
    /// Two layers of width 128 with four heads.
    pub fn small(vocab_size: usize, docid_len: usize) -> Self {
        Self { layers: 2, width: 128, heads: 4, ffn_width: 256, max_query_len: 16, docid_len, vocab_size }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("denoiser config: {m}")));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad("width must be a positive multiple of heads");
        }
        if self.docid_len == 0 {
            return bad("identifier length must be >= 1");
        }
        if self.ffn_width == 0 || self.max_query_len == 0 {
            return bad("ffn width and max query length must be >= 1");
        }
        if self.vocab_size <= 4 {
            return bad("vocabulary too small");
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.max_query_len + 1 + self.docid_len
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every parameter group in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub(crate) tok_emb: Range<usize>,
    pub(crate) pos_emb: Range<usize>,
    pub(crate) layers: Vec<LayerLayout>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) w_out: Range<usize>,
    pub(crate) b_out: Range<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let (w, f, v) = (cfg.width, cfg.ffn_width, cfg.vocab_size);
        let tok_emb = take(v * w);
        let pos_emb = take(cfg.positions() * w);
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                ln1_g: take(w),
                ln1_b: take(w),
                wq: take(w * w),
                wk: take(w * w),
                wv: take(w * w),
                wo: take(w * w),
                ln2_g: take(w),
                ln2_b: take(w),
                w1: take(w * f),
                b1: take(f),
                w2: take(f * w),
                b2: take(w),
            })
            .collect();
        let lnf_g = take(w);
        let lnf_b = take(w);
        let w_out = take(w * v);
        let b_out = take(v);
        Self { tok_emb, pos_emb, layers, lnf_g, lnf_b, w_out, b_out, total: next }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Named parameter groups in buffer order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = alloc::vec![("tok_emb".into(), self.tok_emb.clone()), ("pos_emb".into(), self.pos_emb.clone())];
        for (i, l) in self.layers.iter().enumerate() {
            let named = [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ];
            out.extend(named.into_iter().map(|(n, r)| (format!("layer{i}.{n}"), r.clone())));
        }
        out.push(("lnf_g".into(), self.lnf_g.clone()));
        out.push(("lnf_b".into(), self.lnf_b.clone()));
        out.push(("w_out".into(), self.w_out.clone()));
        out.push(("b_out".into(), self.b_out.clone()));
        out
    }
}

/// Model weights plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParameters {
    config: DenoiserConfig,
    layout: ParamLayout,
    data: Vec<f64>,
}

impl DenoiserParameters {
    /// Uniform initialization with per-weight variance `1 / fan_in`; layer-norm
    /// gains start at one and biases at zero.
    pub fn init(config: DenoiserConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut data = alloc::vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut fill = |r: &Range<usize>, fan_in: usize, data: &mut [f64]| {
            let a = libm::sqrt(3.0 / fan_in as f64);
            for x in &mut data[r.clone()] {
                *x = rng.gen_range(-a..a);
            }
        };
        let (w, f) = (config.width, config.ffn_width);
        fill(&layout.tok_emb, w, &mut data);
        fill(&layout.pos_emb, w, &mut data);
        for l in &layout.layers {
            for r in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1] {
                fill(r, w, &mut data);
            }
            fill(&l.w2, f, &mut data);
            data[l.ln1_g.clone()].fill(1.0);
            data[l.ln2_g.clone()].fill(1.0);
        }
        data[layout.lnf_g.clone()].fill(1.0);
        fill(&layout.w_out, w, &mut data);
        Ok(Self { config, layout, data })
    }

    /// Rebuilds parameters from a flat buffer (e.g. a checkpoint payload).
    pub fn from_flat(config: DenoiserConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if data.len() != layout.total() {
            return Err(Error::ConfigMismatch(format!(
                "payload has {} parameters, config needs {}",
                data.len(),
                layout.total()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.layout.groups().into_iter().find(|(n, _)| n == name).map(|(_, r)| &self.data[r])
    }

    fn check_input(&self, condition: &[TokenId], docid: &[TokenId]) -> Result<()> {
        if condition.len() > self.config.max_query_len {
            return Err(Error::SequenceTooLong { len: condition.len(), max: self.config.max_query_len });
        }
        if docid.len() != self.config.docid_len {
            return Err(Error::DimensionMismatch { expected: self.config.docid_len, got: docid.len() });
        }
        let v = self.config.vocab_size as TokenId;
        if let Some(&t) = condition.iter().chain(docid).find(|&&t| t >= v) {
            return Err(Error::InvalidArgument(format!("token {t} outside vocabulary of {v}")));
        }
        Ok(())
    }

    /// Distribution over the vocabulary at every identifier slot, observed or
    /// masked.
    pub fn predict(&self, condition: &[TokenId], docid: &MaskedSequence) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_batch(&[(condition, docid)])?.pop().expect("one item"))
    }

    /// [`predict`](Self::predict) over several inputs in one pass.
    pub fn predict_batch(&self, items: &[(&[TokenId], &MaskedSequence)]) -> Result<Vec<Vec<Vec<f64>>>> {
        for (c, d) in items {
            self.check_input(c, d.tokens())?;
        }
        let seqs: Vec<model::Sequence> = items.iter().map(|(c, d)| model::Sequence::new(&self.config, c, d.tokens())).collect();
        let rows: Vec<(usize, usize)> = (0..items.len())
            .flat_map(|b| (0..self.config.docid_len).map(move |j| (b, j)))
            .collect();
        let probs = model::forward(self, &seqs, &rows).probs;
        let v = self.config.vocab_size;
        let l = self.config.docid_len;
        Ok(probs.chunks_exact(v * l).map(|item| item.chunks_exact(v).map(<[f64]>::to_vec).collect()).collect())
    }
}

/// A training example with its mask already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedExample {
    pub condition: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub mask: TrainingMask,
}

/// A (condition, identifier) supervision pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub condition: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl TrainingExample {
    /// Truncates the condition to the model's query budget.
    pub fn new(condition: &[TokenId], target: Vec<TokenId>, max_query_len: usize) -> Self {
        Self { condition: condition[..condition.len().min(max_query_len)].to_vec(), target }
    }
}

/// Mean masked-diffusion loss over `batch` and its exact gradient for the
/// given mask patterns.
pub fn loss_and_gradients_masked(params: &DenoiserParameters, batch: &[MaskedExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for ex in batch {
        params.check_input(&ex.condition, &ex.target)?;
        if ex.target.contains(&Vocabulary::MASK) {
            return Err(Error::InvalidArgument("target contains MASK".into()));
        }
    }
    let (loss, grads) = model::loss_and_gradients(params, batch);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("batch of {} produced loss {loss}", batch.len())));
    }
    Ok((loss, grads))
}

/// Draws a mask for each example and returns the mean loss and its gradient.
pub fn loss_and_gradients<R: Rng + ?Sized>(
    params: &DenoiserParameters,
    batch: &[TrainingExample],
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let masked: Vec<MaskedExample> = batch
        .iter()
        .map(|ex| MaskedExample {
            condition: ex.condition.clone(),
            target: ex.target.clone(),
            mask: crate::diffusion::sample_training_mask(ex.target.len(), rng),
        })
        .collect();
    loss_and_gradients_masked(params, &masked)
}

#[cfg(test)]
mod tests;
