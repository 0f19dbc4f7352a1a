use super::PhonemeSegmentation;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Averages the frames of every segment: `T x C` becomes `T' x C` with one
/// row per phoneme segment. Each frame receives gradient `1 / segment length`.
pub fn adaptive_phoneme_pool<'t>(features: Var<'t>, seg: &PhonemeSegmentation) -> Result<Var<'t>> {
    let frames = features.rows();
    if seg.frames() != frames || features.shape().len() != 2 {
        return Err(Error::Invalid(format!(
            "segmentation covers {} frames but features have shape {:?}",
            seg.frames(),
            features.shape()
        )));
    }
    features.segment_mean(&seg.spans())
}

/// Non-differentiable convenience wrapper over plain tensors.
pub fn pool_tensor(features: &Tensor, seg: &PhonemeSegmentation) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.constant(features.clone());
    Ok(adaptive_phoneme_pool(x, seg)?.to_tensor())
}
