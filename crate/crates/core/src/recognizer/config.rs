use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneme::PhonemeInventory;

/// Shape of the toy phoneme recognizer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerConfig {
    /// Channels per input frame (1 for a raw waveform).
    pub input_channels: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub conv_channels: Vec<usize>,
    /// Model width `h`.
    pub width: usize,
    /// Encoder blocks.
    pub blocks: usize,
    pub heads: usize,
    /// Real phonemes; the head emits `phonemes + 1` logits.
    pub phonemes: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            input_channels: 16,
            conv_kernels: vec![5, 5],
            conv_strides: vec![2, 2],
            conv_channels: vec![32, 32],
            width: 32,
            blocks: 2,
            heads: 4,
            phonemes: 16,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.conv_kernels.is_empty() {
            return bad("at least one conv layer is required".into());
        }
        if self.conv_kernels.len() != self.conv_strides.len()
            || self.conv_kernels.len() != self.conv_channels.len()
        {
            return bad("conv_kernels, conv_strides and conv_channels differ in length".into());
        }
        if self
            .conv_kernels
            .iter()
            .chain(&self.conv_strides)
            .chain(&self.conv_channels)
            .any(|&v| v == 0)
        {
            return bad("conv kernels, strides and channels must be positive".into());
        }
        if self.input_channels == 0 || self.width == 0 || self.heads == 0 {
            return bad("input_channels, width and heads must be positive".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.blocks == 0 {
            return bad("the encoder needs at least one block".into());
        }
        PhonemeInventory::new(self.phonemes)?;
        Ok(())
    }

    pub fn inventory(&self) -> PhonemeInventory {
        PhonemeInventory::new(self.phonemes).expect("validated inventory")
    }

    /// Shortest input that yields one output frame.
    pub fn min_input_len(&self) -> usize {
        self.conv_kernels
            .iter()
            .zip(&self.conv_strides)
            .rev()
            .fold(1, |need, (&k, &s)| k + (need - 1) * s)
    }

    /// Output frame count `T'` for an input of `len` frames (valid padding).
    pub fn output_frames(&self, len: usize) -> Option<usize> {
        self.conv_kernels
            .iter()
            .zip(&self.conv_strides)
            .try_fold(len, |l, (&k, &s)| (l >= k).then(|| (l - k) / s + 1))
    }

    pub fn stride_product(&self) -> usize {
        self.conv_strides.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_arithmetic() {
        let c = RecognizerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.min_input_len(), 13);
        assert_eq!(c.output_frames(12), None);
        assert_eq!(c.output_frames(13), Some(1));
        assert_eq!(c.output_frames(150), Some(35));
        // 10 frames: (L - 5) / 2 + 1 = 23 -> (23 - 5) / 2 + 1 = 10
        assert_eq!(c.output_frames(49), Some(10));
        assert_eq!(c.output_frames(50), Some(10));
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let c = RecognizerConfig {
            width: 30,
            heads: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RecognizerConfig {
            conv_strides: vec![2],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
