//! Phoneme-level deepfake speech detection at desk scale.
//!
//! A small reverse-mode autodiff engine ([`tensor`]) drives a CTC-trained
//! phoneme recognizer ([`recognizer`]), adaptive phoneme pooling and random
//! phoneme substitution ([`phoneme`]), a graph attention module over phoneme
//! sequences ([`gat`]) and the detector with its multi-task objective
//! ([`detector`]). [`data`] generates synthetic corpora and [`eval`] computes
//! AUC and EER.

pub mod check;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gat;
pub mod nn;
pub mod optim;
pub mod phoneme;
pub mod pipeline;
pub mod recognizer;
pub mod tensor;

pub use config::RunConfig;
pub use data::{build_corpus, Manifest, Split, SynthConfig};
pub use detector::{DetectorConfig, DetectorModel, Stage, TrainingConfig};
pub use error::{Error, Result};
pub use eval::{auc, eer, ScoreSet, SplitMetrics};
pub use phoneme::{ClassLabel, FrameSequence};
pub use recognizer::{PretrainConfig, RecognizerConfig, RecognizerModel};
pub use tensor::Tensor;
