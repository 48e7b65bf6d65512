//! Self-supervised optimization: shuffled epochs of two-view batches, Adam
//! with cosine annealing, per-epoch loss logs and resumable checkpoints.

mod checkpoint;
mod optim;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::losses::{total_loss, LossConfig, LossError};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::numerics::Graph;
use crate::sampler::{assemble_batch, epoch_batches, BatchSpec, SamplerError};
use crate::store::FeatureStore;

pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, Checkpoint, CheckpointError, RngState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState, OptimError};

/// ChaCha stream that drives batch order, view splits and masks.
pub const SAMPLER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("store feature dimension {store} does not match model input {model}")]
    InputDim { store: usize, model: usize },
    #[error("training needs at least two videos")]
    TooFewVideos,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("checkpoint was written for a different configuration")]
    ConfigMismatch,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub losses: LossConfig,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
            losses: LossConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch size must be at least 2"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(TrainError::Config("learning rates must satisfy 0 <= lr_min <= lr_max"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(TrainError::Config("betas must lie in [0, 1)"));
        }
        if a.eps.is_nan() || a.eps <= 0.0 || a.weight_decay < 0.0 || !a.weight_decay.is_finite() {
            return Err(TrainError::Config("eps must be positive and weight decay non-negative"));
        }
        if !self.losses.mcm && !self.losses.set {
            return Err(TrainError::Config("at least one loss term must be enabled"));
        }
        Ok(())
    }
}

/// Mean losses over the batches of one epoch, with `total = mcm + set`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mcm: f64,
    pub set: f64,
    pub total: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// One optimizer step as executed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub mcm: f32,
    pub set: f32,
    pub total: f32,
}

/// Number of batches per epoch after dropping a trailing singleton.
pub fn batches_per_epoch(videos: usize, batch_size: usize) -> usize {
    videos / batch_size + usize::from(videos % batch_size >= 2)
}

pub struct Trainer<'s> {
    store: &'s FeatureStore,
    model: ModelParams<f32>,
    config: TrainConfig,
    adam: AdamState<f32>,
    step: u64,
    epoch: usize,
    rng: ChaCha8Rng,
    log: Vec<EpochLog>,
    steps: Vec<StepRecord>,
}

impl<'s> Trainer<'s> {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(store: &'s FeatureStore, model: &ModelConfig, config: &TrainConfig) -> Result<Self, TrainError> {
        let params = ModelParams::init(model, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        let adam = AdamState::zeros_like(&params.params);
        Self::assemble(store, params, config, adam, 0, 0, rng, Vec::new())
    }

    /// Continues from a checkpoint written under the same configuration.
    pub fn resume(store: &'s FeatureStore, ckpt: Checkpoint, config: &TrainConfig) -> Result<Self, TrainError> {
        if config_hash(&ckpt.model.config, config) != config_hash(&ckpt.model.config, &ckpt.train) {
            return Err(TrainError::ConfigMismatch);
        }
        let rng = ckpt.rng.restore();
        Self::assemble(
            store,
            ckpt.model,
            config,
            ckpt.adam,
            ckpt.step,
            ckpt.epoch as usize,
            rng,
            ckpt.log,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        store: &'s FeatureStore,
        model: ModelParams<f32>,
        config: &TrainConfig,
        adam: AdamState<f32>,
        step: u64,
        epoch: usize,
        rng: ChaCha8Rng,
        log: Vec<EpochLog>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if store.feature_dim != model.config.input_dim {
            return Err(TrainError::InputDim {
                store: store.feature_dim,
                model: model.config.input_dim,
            });
        }
        if store.len() < 2 {
            return Err(TrainError::TooFewVideos);
        }
        let k = model.config.clips_per_view;
        if let Some(v) = store.videos.iter().find(|v| v.clips.len() < 2 * k) {
            return Err(SamplerError::TooFewClips {
                id: v.id.clone(),
                available: v.clips.len(),
                per_view: k,
            }
            .into());
        }
        Ok(Self {
            store,
            model,
            config: config.clone(),
            adam,
            step,
            epoch,
            rng,
            log,
            steps: Vec::new(),
        })
    }

    pub fn model(&self) -> &ModelParams<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    /// Steps executed by this trainer instance (not restored on resume).
    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn total_steps(&self) -> u64 {
        (self.config.epochs * batches_per_epoch(self.store.len(), self.config.batch_size)) as u64
    }

    /// True when the checkpoint cadence asks for a save after the last epoch.
    pub fn checkpoint_due(&self) -> bool {
        self.is_finished()
            || (self.config.checkpoint_every > 0 && self.epoch.is_multiple_of(self.config.checkpoint_every))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            adam: self.adam.clone(),
            step: self.step,
            epoch: self.epoch as u64,
            rng: RngState::capture(&self.rng),
            log: self.log.clone(),
        }
    }

    /// Runs one epoch and returns its log entry.
    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        let spec = BatchSpec {
            batch_size: self.config.batch_size,
            clips_per_view: self.model.config.clips_per_view,
            mask_ratio: self.model.config.mask_ratio,
        };
        let tau = self.model.config.temperature as f32;
        let total_steps = self.total_steps();
        let batches = epoch_batches(self.store.len(), self.config.batch_size, &mut self.rng);
        let (mut mcm, mut set) = (0.0f64, 0.0f64);
        let mut lr = self.config.lr_max;
        for idx in &batches {
            let batch = assemble_batch::<f32, _>(self.store, idx, &spec, &mut self.rng)?;
            let mut g = Graph::new();
            let bound = self.model.bind(&mut g);
            let obj = total_loss(&mut g, &bound, &batch, &self.config.losses, tau)?;
            let vars = bound.vars().to_vec();
            let report = obj.report(&g);
            if !report.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: self.step });
            }
            let grads = g.backward(obj.total);
            self.model.params.zero_grad();
            self.model.params.accumulate(&grads, &vars);
            lr = cosine_lr(self.step, total_steps, self.config.lr_max, self.config.lr_min);
            adam_step(
                &mut self.model.params,
                &mut self.adam,
                self.step + 1,
                lr,
                &self.config.adam,
            )?;
            self.steps.push(StepRecord {
                step: self.step,
                lr,
                mcm: report.mcm,
                set: report.set,
                total: report.total,
            });
            self.step += 1;
            mcm += report.mcm as f64;
            set += report.set as f64;
        }
        let n = batches.len().max(1) as f64;
        self.epoch += 1;
        let entry = EpochLog {
            epoch: self.epoch,
            mcm: mcm / n,
            set: set / n,
            total: mcm / n + set / n,
            lr,
        };
        self.log.push(entry);
        Ok(entry)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn run<E: From<TrainError>>(
        &mut self,
        mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<(), E>,
    ) -> Result<(), E> {
        while !self.is_finished() {
            let entry = self.run_epoch()?;
            on_epoch(self, &entry)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{generate_synthetic, SyntheticSpec};

    fn tiny_store(videos_per_class: usize) -> FeatureStore {
        let spec = SyntheticSpec {
            num_classes: 2,
            train_videos_per_class: videos_per_class,
            eval_videos_per_class: 1,
            feature_dim: 6,
            clips_per_train_video: 6,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            layers: 1,
            heads: 2,
            proj_dim: 4,
            clips_per_view: 2,
            ..ModelConfig::new(6)
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_epoch_on_four_videos() {
        let store = tiny_store(2);
        let mut t = Trainer::new(&store, &tiny_model(), &tiny_train(1)).unwrap();
        let count = t.model().params.scalar_count();
        let e = t.run_epoch().unwrap();
        assert!(e.total.is_finite() && e.mcm > 0.0 && e.set > 0.0);
        assert_eq!(e.total, e.mcm + e.set);
        assert_eq!(t.step(), 2);
        assert!(t.is_finished() && t.checkpoint_due());
        assert_eq!(t.model().params.scalar_count(), count);
    }

    #[test]
    fn lr_trace_follows_cosine() {
        let store = tiny_store(3);
        let cfg = TrainConfig {
            lr_min: 1e-5,
            ..tiny_train(3)
        };
        let mut t = Trainer::new(&store, &tiny_model(), &cfg).unwrap();
        t.run::<TrainError>(|_, _| Ok(())).unwrap();
        assert_eq!(t.total_steps(), 9);
        for r in t.steps() {
            assert_eq!(r.lr, cosine_lr(r.step, 9, 1e-3, 1e-5));
            assert_eq!(r.total, r.mcm + r.set);
        }
    }

    #[test]
    fn singleton_tail_is_dropped() {
        assert_eq!(batches_per_epoch(9, 4), 2);
        assert_eq!(batches_per_epoch(10, 4), 3);
        assert_eq!(batches_per_epoch(8, 4), 2);
    }

    #[test]
    fn rejects_short_videos_and_bad_configs() {
        let store = tiny_store(2);
        let big_k = ModelConfig {
            clips_per_view: 4,
            ..tiny_model()
        };
        assert!(matches!(
            Trainer::new(&store, &big_k, &tiny_train(1)),
            Err(TrainError::Sampler(SamplerError::TooFewClips { .. }))
        ));
        let bad = TrainConfig {
            lr_min: 1.0,
            ..tiny_train(1)
        };
        assert!(matches!(
            Trainer::new(&store, &tiny_model(), &bad),
            Err(TrainError::Config(_))
        ));
    }
}
