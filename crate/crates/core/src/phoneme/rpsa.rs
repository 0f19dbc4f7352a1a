use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{segment, ClassLabel, FrameSequence, PhonemeSegmentation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random phoneme substitution.
///
/// Every segment of every sample is selected with probability `p`. A selected
/// segment is replaced by the frame block of a uniformly chosen segment with
/// the same phoneme from a different sample of the batch; donors may be
/// reused and segments without a donor are left alone. All outputs are
/// labelled fake.
///
/// Random draws happen in a fixed order (sample, then segment; one selection
/// draw per segment and one donor draw per substitution), so the result is a
/// pure function of the inputs and `seed`.
pub fn rpsa(batch: &[FrameSequence], p: f64, seed: u64) -> Result<Vec<FrameSequence>> {
    if batch.len() < 2 {
        return Err(Error::Invalid(format!(
            "substitution needs a batch of at least 2 samples, got {}",
            batch.len()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("substitution probability {p} outside [0, 1]")));
    }
    let segmentations = batch
        .iter()
        .map(|s| {
            let labels = s.labels.as_deref().ok_or_else(|| {
                Error::Invalid(format!("sample {} has no frame labels", s.sample_id))
            })?;
            segment(labels)
        })
        .collect::<Result<Vec<PhonemeSegmentation>>>()?;

    // phoneme -> (sample, segment index)
    let mut donors: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (i, seg) in segmentations.iter().enumerate() {
        for (k, s) in seg.segments().iter().enumerate() {
            donors.entry(s.phoneme).or_default().push((i, k));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(batch.len());
    for (i, (sample, seg)) in batch.iter().zip(&segmentations).enumerate() {
        let width = sample.width();
        let mut data = Vec::with_capacity(sample.features.len());
        let mut labels = Vec::with_capacity(sample.frames());
        for s in seg.segments() {
            let selected = rng.random::<f64>() < p;
            let mut source = (i, s.start, s.len);
            if selected {
                let candidates: Vec<(usize, usize)> = donors[&s.phoneme]
                    .iter()
                    .copied()
                    .filter(|&(j, _)| j != i)
                    .collect();
                if !candidates.is_empty() {
                    let (j, k) = candidates[rng.random_range(0..candidates.len())];
                    let d = segmentations[j].segments()[k];
                    source = (j, d.start, d.len);
                }
            }
            let (j, start, len) = source;
            let feats = &batch[j].features;
            if feats.cols() != width {
                return Err(Error::shape("rpsa", sample.features.shape(), feats.shape()));
            }
            data.extend_from_slice(&feats.data()[start * width..(start + len) * width]);
            labels.extend(std::iter::repeat_n(s.phoneme, len));
        }
        let features = Tensor::matrix(labels.len(), width, data)?;
        out.push(FrameSequence::new(
            sample.sample_id.clone(),
            features,
            Some(labels),
            ClassLabel::Fake,
        )?);
    }
    Ok(out)
}
