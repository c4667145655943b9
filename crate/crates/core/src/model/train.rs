use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelError, TokenBatch};
use crate::autodiff::{cosine_lr, Adam, AdamConfig};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Scenes per optimizer step, drawn without replacement.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 2000, batch_size: 8, lr: 1e-3, seed: 0, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Optimizer state plus the seeded batch sampler.
///
/// [`Trainer::step`] does everything on the calling thread. Callers that
/// compute gradients elsewhere use [`Trainer::next_batch`] followed by
/// [`Trainer::apply`].
#[derive(Debug, Clone)]
pub struct Trainer<T: Real = f64> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    pub step: usize,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Self {
        let adam = Adam::new(&model.store, cfg.adam);
        Trainer { model, cfg, step: 0, adam, rng: ChaCha8Rng::seed_from_u64(cfg.seed) }
    }

    /// Indices of the scenes for the next step, in sampling order.
    pub fn next_batch(&mut self, dataset_len: usize) -> Vec<usize> {
        sample(&mut self.rng, dataset_len, self.cfg.batch_size.clamp(1, dataset_len)).into_vec()
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.cfg.lr, self.step, self.cfg.steps)
    }

    /// Applies one Adam update with gradients of the mean loss `loss`.
    pub fn apply(&mut self, loss: f64, grads: &[Vec<T>]) -> Result<LossRecord, ModelError> {
        let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
        if !finite {
            let norms: Vec<String> = self.model.param_norms().into_iter().take(5).map(|(n, v)| format!("{n}={v:.3e}")).collect();
            return Err(ModelError::NonFinite { step: self.step, loss, norms: norms.join(", ") });
        }
        let lr = self.lr();
        self.adam.update(&mut self.model.store, grads, lr)?;
        let rec = LossRecord { step: self.step, lr, loss };
        self.step += 1;
        Ok(rec)
    }

    pub fn step(&mut self, data: &[TokenBatch]) -> Result<LossRecord, ModelError> {
        if data.is_empty() {
            return Err(ModelError::Shape("training needs at least one scene".into()));
        }
        let picks = self.next_batch(data.len());
        let batches: Vec<&TokenBatch> = picks.iter().map(|&i| &data[i]).collect();
        let (loss, _, grads) = self.model.loss_and_grads(&batches)?;
        self.apply(loss, &grads)
    }
}

/// Single-threaded training loop; returns the trained model and the loss of every step.
pub fn train<T: Real>(model: Model<T>, data: &[TokenBatch], cfg: TrainConfig) -> Result<(Model<T>, Vec<LossRecord>), ModelError> {
    let mut tr = Trainer::new(model, cfg);
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        curve.push(tr.step(data)?);
    }
    Ok((tr.model, curve))
}
