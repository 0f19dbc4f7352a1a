use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneme::{ClassLabel, FrameSequence};
use crate::tensor::Tensor;

/// Which fake defects are rendered. Each one scales with the intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defects {
    /// Cross-fade width shrinks by the intensity.
    pub hard_transitions: bool,
    /// Phoneme durations shrink by `shortening * intensity`.
    pub duration_shift: bool,
    /// Each segment drifts linearly away from its prototype.
    pub prototype_drift: bool,
    /// Frames inside a transition window are permuted with probability equal
    /// to the intensity.
    pub shuffled_transitions: bool,
}

impl Default for Defects {
    fn default() -> Self {
        Self {
            hard_transitions: true,
            duration_shift: true,
            prototype_drift: true,
            shuffled_transitions: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Inventory size `P`.
    pub phonemes: usize,
    /// Feature width of every input frame.
    pub channels: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Utterance length is uniform in `[min_frames, max_frames]`.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Frames of linear cross-fade centred on each phoneme boundary.
    pub transition_width: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Standard deviation of prototype entries.
    pub prototype_scale: f64,
    /// Peak drift magnitude (per prototype standard deviation).
    pub drift: f64,
    /// Relative duration reduction at full intensity.
    pub shortening: f64,
    pub intensity: f64,
    pub defects: Defects,
    pub bonafide: usize,
    pub fake: usize,
    /// Train, validation and test fractions.
    pub splits: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            phonemes: 16,
            channels: 16,
            min_duration: 8,
            max_duration: 20,
            min_frames: 160,
            max_frames: 240,
            transition_width: 6,
            noise: 0.3,
            prototype_scale: 1.0,
            drift: 1.0,
            shortening: 0.4,
            intensity: 0.7,
            defects: Defects::default(),
            bonafide: 100,
            fake: 100,
            splits: [0.8, 0.1, 0.1],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phonemes < 2 {
            return bad(format!("synth.phonemes must be at least 2, got {}", self.phonemes));
        }
        if self.channels == 0 {
            return bad("synth.channels must be positive".into());
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return bad(format!(
                "synth durations need 1 <= min_duration <= max_duration, got {}..{}",
                self.min_duration, self.max_duration
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "synth frames need 1 <= min_frames <= max_frames, got {}..{}",
                self.min_frames, self.max_frames
            ));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad(format!("synth.intensity {} outside [0, 1]", self.intensity));
        }
        if !(0.0..1.0).contains(&self.shortening) {
            return bad(format!("synth.shortening {} outside [0, 1)", self.shortening));
        }
        if self.noise < 0.0 || self.drift < 0.0 || self.prototype_scale <= 0.0 {
            return bad("synth noise and drift must be non-negative, prototype_scale positive".into());
        }
        if self.splits.iter().any(|&f| !(0.0..=1.0).contains(&f))
            || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("synth.splits {:?} must be fractions summing to 1", self.splits));
        }
        Ok(())
    }

    /// `P x channels` prototype matrix, fixed by the corpus seed.
    pub fn prototypes(&self) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5052_4f54_4f54_5950);
        Tensor::randn(&[self.phonemes, self.channels], self.prototype_scale, &mut rng)
    }

    fn strength(&self, enabled: bool) -> f64 {
        if enabled {
            self.intensity
        } else {
            0.0
        }
    }
}

/// Generated utterance with its reference phoneme sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub sequence: FrameSequence,
    pub phonemes: Vec<usize>,
}

/// Renders one utterance.
///
/// Structure (length, phonemes, base durations, noise) comes from `rng`;
/// defect randomness comes from a second stream seeded from it and is drawn
/// for both classes, so a fake at intensity 0 equals the bonafide sample
/// generated from the same seed.
pub fn synth_sample<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    prototypes: &Tensor,
    id: impl Into<String>,
    class: ClassLabel,
    rng: &mut R,
) -> Result<SynthSample> {
    if prototypes.shape() != [cfg.phonemes, cfg.channels] {
        return Err(Error::shape("synth prototypes", prototypes.shape(), &[cfg.phonemes, cfg.channels]));
    }
    let fake = class == ClassLabel::Fake;
    let s = |enabled: bool| if fake { cfg.strength(enabled) } else { 0.0 };
    let mut defect_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let total = rng.random_range(cfg.min_frames..=cfg.max_frames);
    let shrink = 1.0 - cfg.shortening * s(cfg.defects.duration_shift);
    let mut phonemes: Vec<usize> = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    let mut filled = 0;
    while filled < total {
        let p = loop {
            let p = rng.random_range(0..cfg.phonemes);
            if phonemes.last() != Some(&p) {
                break p;
            }
        };
        let base = rng.random_range(cfg.min_duration..=cfg.max_duration);
        let len = ((base as f64 * shrink).round() as usize).max(1).min(total - filled);
        phonemes.push(p);
        lengths.push(len);
        filled += len;
    }

    let d = cfg.channels;
    let width = (cfg.transition_width as f64 * (1.0 - s(cfg.defects.hard_transitions))).round() as usize;
    let mut labels = Vec::with_capacity(total);
    let mut starts = Vec::with_capacity(phonemes.len());
    for (&p, &len) in phonemes.iter().zip(&lengths) {
        starts.push(labels.len());
        labels.extend(std::iter::repeat_n(p, len));
    }
    let proto = |p: usize| prototypes.row(p);
    let mut data: Vec<f64> = labels.iter().flat_map(|&p| proto(p).to_vec()).collect();

    // cross-fades around every boundary
    let windows = transition_windows(&starts, &lengths, width);
    for &(k, lo, hi) in &windows {
        let n = (hi - lo) as f64;
        for t in lo..hi {
            let lambda = (t - lo) as f64 / n + 0.5 / n;
            let (a, b) = (proto(phonemes[k]), proto(phonemes[k + 1]));
            for c in 0..d {
                data[t * d + c] = (1.0 - lambda) * a[c] + lambda * b[c];
            }
        }
    }

    // linear drift inside each segment
    let drift = cfg.drift * cfg.prototype_scale * s(cfg.defects.prototype_drift);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for (&start, &len) in starts.iter().zip(&lengths) {
        let dir: Vec<f64> = (0..d).map(|_| normal.sample(&mut defect_rng)).collect();
        if drift == 0.0 || len < 2 {
            continue;
        }
        for t in start..start + len {
            let pos = 2.0 * (t - start) as f64 / (len - 1) as f64 - 1.0;
            for c in 0..d {
                data[t * d + c] += drift * pos * dir[c];
            }
        }
    }

    // shuffled transition frames
    let shuffle_p = s(cfg.defects.shuffled_transitions);
    for &(_, lo, hi) in &windows {
        let hit = defect_rng.random::<f64>() < shuffle_p;
        let mut order: Vec<usize> = (lo..hi).collect();
        order.shuffle(&mut defect_rng);
        if hit {
            let block: Vec<f64> = order.iter().flat_map(|&t| data[t * d..(t + 1) * d].to_vec()).collect();
            data[lo * d..hi * d].copy_from_slice(&block);
        }
    }

    if cfg.noise > 0.0 {
        let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        data.iter_mut().for_each(|x| *x += noise.sample(rng));
    }

    let features = Tensor::matrix(total, d, data)?;
    Ok(SynthSample {
        sequence: FrameSequence::new(id, features, Some(labels), class)?,
        phonemes,
    })
}

/// Cross-fade windows `(left segment, lo, hi)` centred on each boundary and
/// kept within half of each neighbouring segment.
pub fn transition_windows(starts: &[usize], lengths: &[usize], width: usize) -> Vec<(usize, usize, usize)> {
    if width == 0 {
        return Vec::new();
    }
    (0..starts.len().saturating_sub(1))
        .filter_map(|k| {
            let b = starts[k + 1];
            let left = (width / 2).min(lengths[k] / 2);
            let right = (width - width / 2).min(lengths[k + 1] / 2);
            (left + right > 0).then_some((k, b - left, b + right))
        })
        .collect()
}
