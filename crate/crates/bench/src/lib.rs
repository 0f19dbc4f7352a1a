//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phonograph::detector::{DetectorConfig, DetectorModel, FrozenPass};
use phonograph::recognizer::{RecognizerConfig, RecognizerModel};
use phonograph::{ClassLabel, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piecewise-constant labels with runs of 1 to `max_run` frames.
pub fn run_labels(frames: usize, phonemes: usize, max_run: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let p = rng.random_range(0..phonemes);
        out.extend(std::iter::repeat_n(p, rng.random_range(1..=max_run)));
    }
    out.truncate(frames);
    out
}

/// Detector on the default recognizer shape with a batch of frozen passes
/// over default-length clips.
pub fn detector_batch(batch: usize, seed: u64) -> (DetectorModel, Vec<FrozenPass>) {
    let cfg = RecognizerConfig::default();
    let recognizer = RecognizerModel::new(cfg.clone(), seed).expect("default config is valid");
    let model = DetectorModel::new(recognizer, DetectorConfig::default()).expect("default config is valid");
    let mut r = rng(seed);
    let passes = (0..batch)
        .map(|i| {
            let class = if i % 2 == 0 { ClassLabel::Bonafide } else { ClassLabel::Fake };
            let x = Tensor::randn(&[150, cfg.input_channels], 1.0, &mut r);
            let seq = phonograph::FrameSequence::new(format!("b{i}"), x, None, class).expect("valid clip");
            let mut pass = model.frozen_pass(&seq).expect("clip is long enough");
            pass.labels = run_labels(pass.labels.len(), cfg.phonemes, 3, &mut r);
            pass
        })
        .collect();
    (model, passes)
}
