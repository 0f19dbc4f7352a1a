//! Phoneme inventories, frame-label segmentation, adaptive phoneme pooling
//! and random phoneme substitution.

mod pool;
mod rpsa;

pub use pool::{adaptive_phoneme_pool, pool_tensor};
pub use rpsa::rpsa;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `size` real phonemes with ids `0..size`; id `size` is the CTC blank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    size: usize,
}

impl PhonemeInventory {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Invalid("phoneme inventory must not be empty".into()));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn blank_id(&self) -> usize {
        self.size
    }

    /// Number of recognizer output classes (phonemes plus blank).
    pub fn classes(&self) -> usize {
        self.size + 1
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l > self.size) {
            Some(l) => Err(Error::Invalid(format!(
                "label {l} outside inventory 0..={}",
                self.size
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Bonafide,
    Fake,
}

impl ClassLabel {
    /// Binary target: bonafide is 1, fake is 0.
    pub fn target(self) -> f64 {
        match self {
            ClassLabel::Bonafide => 1.0,
            ClassLabel::Fake => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Bonafide => "bonafide",
            ClassLabel::Fake => "fake",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(ClassLabel::Bonafide),
            "fake" => Ok(ClassLabel::Fake),
            other => Err(Error::Invalid(format!(
                "unknown class label {other:?} (expected bonafide or fake)"
            ))),
        }
    }
}

/// Frame-level features of one sample (`T x C`) with optional per-frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub sample_id: String,
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub class_label: ClassLabel,
}

impl FrameSequence {
    pub fn new(
        sample_id: impl Into<String>,
        features: Tensor,
        labels: Option<Vec<usize>>,
        class_label: ClassLabel,
    ) -> Result<Self> {
        if features.rank() != 2 || features.rows() == 0 {
            return Err(Error::Invalid(format!(
                "frame sequence needs a non-empty T x C matrix, got {:?}",
                features.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::shape("frame labels", features.shape(), &[l.len()]));
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            features,
            labels,
            class_label,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub phoneme: usize,
    pub start: usize,
    pub len: usize,
}

/// Maximal runs of equal consecutive frame labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSegmentation {
    segments: Vec<Segment>,
}

impl PhonemeSegmentation {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Frames covered by all segments.
    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.len)
    }

    pub fn phonemes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.phoneme).collect()
    }

    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.segments.iter().map(|s| (s.start, s.len)).collect()
    }

    /// Back to one label per frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.phoneme, s.len))
            .collect()
    }

    /// Segmentation as `(phoneme, start, count)` triples.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        self.segments
            .iter()
            .map(|s| (s.phoneme, s.start, s.len))
            .collect()
    }
}

pub fn segment(labels: &[usize]) -> Result<PhonemeSegmentation> {
    let Some(&first) = labels.first() else {
        return Err(Error::Invalid("cannot segment an empty label sequence".into()));
    };
    let mut segments = vec![Segment {
        phoneme: first,
        start: 0,
        len: 1,
    }];
    for (t, &l) in labels.iter().enumerate().skip(1) {
        let last = segments.last_mut().unwrap();
        if last.phoneme == l {
            last.len += 1;
        } else {
            segments.push(Segment {
                phoneme: l,
                start: t,
                len: 1,
            });
        }
    }
    Ok(PhonemeSegmentation { segments })
}
