use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradients, DenoiserParameters, TrainingExample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument("learning rate must be > 0 and batch size >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("moment coefficients must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: alloc::vec![0.0; len], v: alloc::vec![0.0; len] }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
        let lr = cfg.learning_rate;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (libm::sqrt(vhat) + cfg.eps) + cfg.weight_decay * params[i]);
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParameters,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
    /// Mean loss of each completed epoch.
    pub loss_trace: Vec<f64>,
    /// Loss of the very first batch, the divergence reference.
    pub initial_loss: Option<f64>,
}

impl TrainState {
    pub fn new(params: DenoiserParameters) -> Self {
        let n = params.len();
        Self { params, optimizer: OptimizerState::new(n), epochs_done: 0, loss_trace: Vec::new(), initial_loss: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Runs the remaining epochs of `cfg` on `examples`.
///
/// Each epoch draws its shuffle and masks from a stream keyed by (seed,
/// epoch), so stopping after any epoch and resuming from the saved state
/// reproduces the uninterrupted run. `on_epoch` may return `Break` to stop
/// early.
pub fn train<F>(state: &mut TrainState, examples: &[TrainingExample], cfg: &TrainConfig, mut on_epoch: F) -> Result<()>
where
    F: FnMut(&EpochReport, &TrainState) -> ControlFlow<()>,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let mut rng = epoch_rng(cfg.seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (loss, mut grads) = loss_and_gradients(&state.params, &batch, &mut rng)?;
            state.initial_loss.get_or_insert(loss);
            total += loss * chunk.len() as f64;
            let norm = grads.norm();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grads.data.iter_mut().for_each(|g| *g *= s);
            }
            state.optimizer.update(state.params.as_flat_mut(), &grads.data, cfg);
        }
        let mean_loss = total / examples.len() as f64;
        let initial = state.initial_loss.unwrap_or(mean_loss);
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss(alloc::format!("epoch {epoch} mean loss {mean_loss}")));
        }
        if mean_loss > 10.0 * initial {
            return Err(Error::Diverged { epoch, loss: mean_loss, initial });
        }
        state.loss_trace.push(mean_loss);
        state.epochs_done += 1;
        if on_epoch(&EpochReport { epoch, mean_loss }, state).is_break() {
            break;
        }
    }
    Ok(())
}
