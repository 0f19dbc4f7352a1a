//! Glue between a corpus manifest and the training entry points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{clip_or_pad, ClipMode, Manifest, Split};
use crate::detector::{score_clips, train, DetectorModel, EpochRecord, Stage, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{EmbeddingRow, ScoreSet, SplitMetrics};
use crate::phoneme::{segment, ClassLabel, FrameSequence};
use crate::recognizer::{pretrain, PretrainRecord, RecognizerModel, Utterance};

/// Recognizer examples from centred clips of one split. The target is the
/// collapsed frame-label sequence inside the clip. `class` restricts the
/// examples to one class.
pub fn utterances(
    manifest: &Manifest,
    split: Split,
    clip_frames: usize,
    class: Option<ClassLabel>,
) -> Result<Vec<Utterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    manifest
        .split(split)
        .filter(|e| class.is_none_or(|c| e.label == c))
        .map(|e| {
            let clip = clip_or_pad(&manifest.load(e)?, clip_frames, ClipMode::Eval, &mut rng)?;
            let labels = clip
                .labels
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("{}: no frame labels in the manifest", e.id)))?;
            Ok(Utterance {
                id: e.id.clone(),
                target: segment(labels)?.phonemes(),
                input: clip.features,
            })
        })
        .collect()
}

/// Pretrains a fresh recognizer on the bonafide train split, selecting on
/// the bonafide validation split.
pub fn pretrain_recognizer(cfg: &RunConfig, manifest: &Manifest) -> Result<(RecognizerModel, Vec<PretrainRecord>)> {
    let clip = cfg.training.clip_frames;
    let bona = Some(ClassLabel::Bonafide);
    let train_set = utterances(manifest, Split::Train, clip, bona)?;
    let val_set = utterances(manifest, Split::Val, clip, bona)?;
    if train_set.is_empty() {
        return Err(Error::Invalid("no bonafide training samples in the manifest".into()));
    }
    let mut model = RecognizerModel::new(cfg.recognizer.clone(), cfg.pretrain.seed)?;
    let log = pretrain(&mut model, &train_set, &val_set, &cfg.pretrain)?;
    Ok((model, log))
}

/// Builds a detector around `recognizer` and trains it on the train split,
/// validating on the validation split.
pub fn train_detector(
    cfg: &RunConfig,
    recognizer: RecognizerModel,
    manifest: &Manifest,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(DetectorModel, TrainOutcome)> {
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let mut model = DetectorModel::new(recognizer, cfg.detector.clone())?;
    let outcome = train(&mut model, &train_set, &val_set, &cfg.training, on_epoch)?;
    Ok((model, outcome))
}

/// Scores the centred clips of one split.
pub fn score_split(model: &DetectorModel, manifest: &Manifest, split: Split, clip_frames: usize) -> Result<ScoreSet> {
    let samples: Vec<FrameSequence> = manifest.load_split(split)?;
    score_clips(model, &samples, clip_frames)
}

/// Embeddings of the centred clips of one split, taken at `stage`.
pub fn embed_split(
    model: &DetectorModel,
    manifest: &Manifest,
    split: Split,
    clip_frames: usize,
    stage: Stage,
) -> Result<Vec<EmbeddingRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    manifest
        .split(split)
        .map(|e| {
            let clip = clip_or_pad(&manifest.load(e)?, clip_frames, ClipMode::Eval, &mut rng)?;
            Ok(EmbeddingRow {
                id: e.id.clone(),
                label: e.label,
                values: model.embed(&clip, stage)?,
            })
        })
        .collect()
}

/// AUC and EER of one split.
pub fn evaluate_split(
    model: &DetectorModel,
    manifest: &Manifest,
    split: Split,
    clip_frames: usize,
) -> Result<SplitMetrics> {
    SplitMetrics::compute(split.as_str(), &score_split(model, manifest, split, clip_frames)?)
}
