use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corpus_per, ctc_loss, RecognizerModel};
use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::optim::AdamW;
use crate::tensor::{Tape, Tensor, Var};

/// One recognizer training example.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    /// `L x input_channels` input frames.
    pub input: Tensor,
    /// Reference phoneme sequence (no blanks).
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 1e-4,
            seed: 7,
        }
    }
}

/// Per-epoch pretraining record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub train_ctc: f64,
    pub val_per: f64,
    pub best: bool,
}

/// Batch CTC loss (mean over utterances) on a shared tape.
pub fn batch_ctc<'t>(
    model: &RecognizerModel,
    ctx: &Ctx<'t>,
    batch: &[&Utterance],
) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for u in batch {
        let pass = model.forward(ctx, ctx.constant(u.input.clone()))?;
        let l = ctc_loss(pass.logits, &u.target)?;
        total = Some(match total {
            Some(t) => t.add(&l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid("empty batch".into()))?;
    Ok(total.scale(1.0 / batch.len() as f64))
}

/// Greedy-decoding PER over a set of utterances (total edits / total phonemes).
pub fn evaluate_per(model: &RecognizerModel, data: &[Utterance]) -> Result<f64> {
    let decoded = data
        .par_iter()
        .map(|u| model.recognize(&u.input).map(|r| r.phonemes))
        .collect::<Result<Vec<_>>>()?;
    corpus_per(
        data.iter()
            .zip(&decoded)
            .map(|(u, h)| (u.target.as_slice(), h.as_slice())),
    )
}

/// Trains the recognizer with CTC and AdamW, keeping the weights with the
/// lowest validation PER (the training set stands in when `val` is empty).
/// Stops early once the validation PER reaches zero.
pub fn pretrain(
    model: &mut RecognizerModel,
    train: &[Utterance],
    val: &[Utterance],
    config: &PretrainConfig,
) -> Result<Vec<PretrainRecord>> {
    if train.is_empty() {
        return Err(Error::Invalid("pretraining corpus is empty".into()));
    }
    let batch_size = config.batch_size.max(1);
    let val = if val.is_empty() { train } else { val };
    let mut opt = AdamW::new(config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, crate::nn::ParamStore)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &train[i]).collect();
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &model.store);
            let loss = batch_ctc(model, &ctx, &batch)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite { step, value });
            }
            let grads = ctx.param_grads(&tape.backward(loss)?);
            drop(ctx);
            opt.step(&mut model.store, &grads);
            loss_sum += value * batch.len() as f64;
            step += 1;
        }
        let val_per = evaluate_per(model, val)?;
        let improved = best.as_ref().is_none_or(|(b, _)| val_per < *b);
        if improved {
            best = Some((val_per, model.store.clone()));
        }
        log.push(PretrainRecord {
            epoch,
            train_ctc: loss_sum / train.len() as f64,
            val_per,
            best: improved,
        });
        if val_per == 0.0 {
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(log)
}
