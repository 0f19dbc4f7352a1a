use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DetectorModel, Objective};
use crate::data::{clip_or_pad, ClipMode};
use crate::error::{Error, Result};
use crate::eval::{auc, eer, ScoreSet, Scored};
use crate::nn::Ctx;
use crate::optim::AdamW;
use crate::phoneme::FrameSequence;
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Learning rate of the copied encoder.
    pub lr_encoder: f64,
    /// Learning rate of every other trainable weight.
    pub lr_other: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a strictly better validation AUC before stopping.
    pub patience: usize,
    /// Substitution probability.
    pub rpsa_p: f64,
    pub use_rpsa: bool,
    pub use_clip: bool,
    /// Clip length in input frames.
    pub clip_frames: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 5e-5,
            lr_other: 1e-4,
            weight_decay: 0.01,
            batch_size: 4,
            epochs: 30,
            patience: 3,
            rpsa_p: 0.2,
            use_rpsa: true,
            use_clip: true,
            clip_frames: 150,
            seed: 7,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0 && self.lr_other > 0.0) {
            return Err(Error::Config("training learning rates must be positive".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.clip_frames == 0 {
            return Err(Error::Config(
                "training.patience, batch_size and clip_frames must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rpsa_p) {
            return Err(Error::Config(format!("training.rpsa_p {} outside [0, 1]", self.rpsa_p)));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            clip: self.use_clip,
            rpsa: self.use_rpsa.then_some(self.rpsa_p),
        }
    }
}

/// Patience counter over validation AUC; only a strictly higher AUC counts as
/// an improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records the AUC of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, auc: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if auc <= b || auc.is_nan() => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, auc));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, auc)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub l_cls: f64,
    pub l_clip: Option<f64>,
    pub l_aug: Option<f64>,
    pub val_auc: f64,
    pub val_eer: f64,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_auc: f64,
}

/// Validation scores of centred clips.
pub fn score_clips(model: &DetectorModel, samples: &[FrameSequence], clip_frames: usize) -> Result<ScoreSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clips = samples
        .iter()
        .map(|s| clip_or_pad(s, clip_frames, ClipMode::Eval, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let scores = model.score_all(&clips)?;
    ScoreSet::new(
        clips
            .iter()
            .zip(scores)
            .map(|(c, score)| Scored {
                id: c.sample_id.clone(),
                score,
                label: c.class_label,
            })
            .collect(),
    )
}

/// Hook for waveform-level augmentation (noise, pitch). Input frames here are
/// already features, so it leaves the clip unchanged.
fn augment_clip(clip: FrameSequence) -> FrameSequence {
    clip
}

/// Trains the detector with AdamW (copied encoder and the rest at separate
/// rates), validates after every epoch and restores the weights of the epoch
/// with the best validation AUC. `on_epoch` sees each log record as it is
/// produced.
pub fn train(
    model: &mut DetectorModel,
    train_set: &[FrameSequence],
    val_set: &[FrameSequence],
    cfg: &TrainingConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if val_set.is_empty() {
        return Err(Error::Invalid("validation set must be non-empty".into()));
    }
    let validate = |m: &DetectorModel, _epoch: usize| {
        let scores = score_clips(m, val_set, cfg.clip_frames)?;
        Ok((auc(&scores)?, eer(&scores)?))
    };
    train_with_validator(model, train_set, cfg, validate, on_epoch)
}

/// [`train`] with a caller-supplied validation step returning `(AUC, EER)`
/// for the model after each epoch.
pub fn train_with_validator(
    model: &mut DetectorModel,
    train_set: &[FrameSequence],
    cfg: &TrainingConfig,
    mut validate: impl FnMut(&DetectorModel, usize) -> Result<(f64, f64)>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set must be non-empty".into()));
    }
    let objective = cfg.objective();
    let mut opt = AdamW::new(cfg.lr_other, cfg.weight_decay).with_encoder_lr(cfg.lr_encoder);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_store = model.store.clone();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let clips = order
            .iter()
            .map(|&i| clip_or_pad(&train_set[i], cfg.clip_frames, ClipMode::Train, &mut rng).map(augment_clip))
            .collect::<Result<Vec<_>>>()?;
        let frozen = model.frozen_passes(&clips)?;
        let (mut sum_cls, mut sum_clip, mut sum_aug, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in frozen.chunks(cfg.batch_size) {
            let rpsa_seed: u64 = rng.random();
            let tape = Tape::new();
            let (grads, cls, clip, aug) = {
                let ctx = Ctx::new(&tape, &model.store);
                let loss = model.batch_loss(&ctx, batch, objective, rpsa_seed)?;
                let value = loss.total.item();
                if !value.is_finite() {
                    return Err(Error::NonFinite { step, value });
                }
                (ctx.param_grads(&tape.backward(loss.total)?), loss.cls, loss.clip, loss.aug)
            };
            opt.step(&mut model.store, &grads);
            step += 1;
            batches += 1;
            sum_cls += cls;
            sum_clip += clip.unwrap_or(0.0);
            sum_aug += aug.unwrap_or(0.0);
        }
        let (val_auc, val_eer) = validate(model, epoch)?;
        let decision = stopper.observe(epoch, val_auc);
        if decision == StopDecision::Improved {
            best_store = model.store.clone();
        }
        let n = batches as f64;
        let record = EpochRecord {
            epoch,
            step,
            l_cls: sum_cls / n,
            l_clip: objective.clip.then_some(sum_clip / n),
            l_aug: objective.rpsa.map(|_| sum_aug / n),
            val_auc,
            val_eer,
            best: decision == StopDecision::Improved,
        };
        on_epoch(&record);
        log.push(record);
        if decision == StopDecision::Stop {
            break;
        }
    }
    model.store = best_store;
    let (best_epoch, best_auc) = stopper.best().unwrap_or((0, f64::NAN));
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_auc,
    })
}
