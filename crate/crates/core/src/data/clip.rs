use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneme::FrameSequence;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Uniformly random window.
    Train,
    /// Centred window.
    Eval,
}

/// Frame indices selected by [`clip_or_pad`].
pub fn clip_indices<R: Rng + ?Sized>(frames: usize, len: usize, mode: ClipMode, rng: &mut R) -> Vec<usize> {
    if frames < len {
        return (0..len).map(|i| i % frames).collect();
    }
    let offset = match mode {
        ClipMode::Train => rng.random_range(0..=frames - len),
        ClipMode::Eval => (frames - len) / 2,
    };
    (offset..offset + len).collect()
}

/// Cuts a window of exactly `len` frames, or repeats a short sequence
/// cyclically up to `len`. Labels follow their frames.
pub fn clip_or_pad<R: Rng + ?Sized>(
    seq: &FrameSequence,
    len: usize,
    mode: ClipMode,
    rng: &mut R,
) -> Result<FrameSequence> {
    if len == 0 {
        return Err(Error::Invalid("clip length must be at least 1".into()));
    }
    let idx = clip_indices(seq.frames(), len, mode, rng);
    let mut data = Vec::with_capacity(len * seq.width());
    for &t in &idx {
        data.extend_from_slice(seq.features.row(t));
    }
    let labels = seq.labels.as_ref().map(|l| idx.iter().map(|&t| l[t]).collect());
    FrameSequence::new(
        seq.sample_id.clone(),
        Tensor::matrix(len, seq.width(), data)?,
        labels,
        seq.class_label,
    )
}
