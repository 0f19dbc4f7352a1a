use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce, clip_loss, total_loss};
use crate::error::{Error, Result};
use crate::gat::{build_edges, GatStack, DEFAULT_SPAN};
use crate::nn::{Ctx, Linear, ParamGroup, ParamStore};
use crate::phoneme::{adaptive_phoneme_pool, rpsa, segment, ClassLabel, FrameSequence};
use crate::recognizer::{Encoder, RecognizerModel};
use crate::tensor::{Tape, Tensor, Var};

pub const DETECTOR_FORMAT: &str = "detector-v1";
const CONFIG_FILE: &str = "config.txt";
const RECOGNIZER_DIR: &str = "recognizer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Forward edge span of the phoneme graph.
    pub span: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// When false, pooled phoneme features go straight to the temporal mean.
    pub use_gat: bool,
    /// Seed for the freshly initialised weights.
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            span: DEFAULT_SPAN,
            tau: 0.07,
            use_gat: true,
            seed: 7,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.span == 0 {
            return Err(Error::Config("detector.span must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("detector.tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Where an exported embedding is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Temporal mean of the fine-tuned frame features.
    Frame,
    /// Mean of the pooled phoneme features.
    Phoneme,
    /// The classifier input.
    PostGat,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Frame, Stage::Phoneme, Stage::PostGat];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Frame => "frame",
            Stage::Phoneme => "phoneme",
            Stage::PostGat => "post-gat",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stage {s:?}; valid stages: frame, phoneme, post-gat")))
    }
}

/// Output of the frozen recognizer on one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPass {
    pub sample_id: String,
    pub class_label: ClassLabel,
    /// Front-end features `F_init`.
    pub f_init: Tensor,
    /// Frozen encoder output `F_f`.
    pub frames: Tensor,
    /// Greedy frame labels.
    pub labels: Vec<usize>,
}

impl FrozenPass {
    /// `F_init` with its frame labels, as substitution input.
    pub fn as_sequence(&self) -> Result<FrameSequence> {
        FrameSequence::new(
            self.sample_id.clone(),
            self.f_init.clone(),
            Some(self.labels.clone()),
            self.class_label,
        )
    }
}

/// Trainable part of one forward pass, still on the tape.
pub struct DetectorPass<'t> {
    /// Fine-tuned frame features `F'_f`.
    pub frames: Var<'t>,
    /// Pooled phoneme features `F_p`.
    pub phonemes: Var<'t>,
    /// Classifier input `F_cls` (`1 x C`).
    pub pooled: Var<'t>,
    /// Bonafide probability (`1 x 1`).
    pub score: Var<'t>,
}

/// Loss terms of one batch.
pub struct BatchLoss<'t> {
    pub total: Var<'t>,
    pub cls: f64,
    pub clip: Option<f64>,
    pub aug: Option<f64>,
}

/// Which auxiliary terms a training step includes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub clip: bool,
    /// Substitution probability; `None` drops the augmented term.
    pub rpsa: Option<f64>,
}

/// Frozen recognizer, copied encoder, graph attention module, classifier
/// head and contrastive projector.
///
/// `store` begins with a frozen copy of every recognizer weight (same
/// parameter ids), followed by the trainable weights.
#[derive(Clone, Debug)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub recognizer: RecognizerModel,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub gat: GatStack,
    pub head: Linear,
    pub projector: [Linear; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    recognizer: String,
    detector: DetectorConfig,
}

impl DetectorModel {
    pub fn new(recognizer: RecognizerModel, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut store = recognizer.store.clone();
        for id in store.ids().collect::<Vec<_>>() {
            store.set_group(id, ParamGroup::Frozen);
        }
        let encoder = recognizer
            .encoder
            .duplicate(&mut store, "encoder", "copied_encoder", ParamGroup::Encoder);
        let width = recognizer.config.width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let main = ParamGroup::Main;
        let gat = GatStack::new(&mut store, "gat", width, main, &mut rng);
        let head = Linear::new(&mut store, "classifier", width, 1, main, &mut rng);
        let projector = [
            Linear::new(&mut store, "projector.0", width, width, main, &mut rng),
            Linear::new(&mut store, "projector.1", width, width, main, &mut rng),
        ];
        Ok(Self {
            config,
            recognizer,
            store,
            encoder,
            gat,
            head,
            projector,
        })
    }

    pub fn width(&self) -> usize {
        self.recognizer.config.width
    }

    /// Runs the frozen recognizer on one clip of input frames.
    pub fn frozen_pass(&self, clip: &FrameSequence) -> Result<FrozenPass> {
        let r = self.recognizer.recognize(&clip.features)?;
        Ok(FrozenPass {
            sample_id: clip.sample_id.clone(),
            class_label: clip.class_label,
            f_init: r.f_init,
            frames: r.frames,
            labels: r.frame_labels,
        })
    }

    pub fn frozen_passes(&self, clips: &[FrameSequence]) -> Result<Vec<FrozenPass>> {
        clips.par_iter().map(|c| self.frozen_pass(c)).collect()
    }

    /// Copied encoder, pooling, graph attention, temporal mean and head.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, f_init: Var<'t>, labels: &[usize]) -> Result<DetectorPass<'t>> {
        let frames = self.encoder.forward(ctx, f_init)?;
        let seg = segment(labels)?;
        let phonemes = adaptive_phoneme_pool(frames, &seg)?;
        let context = if self.config.use_gat {
            let graph = build_edges(seg.len(), self.config.span);
            self.gat.forward(ctx, phonemes, &graph)?
        } else {
            phonemes
        };
        let pooled = context.mean_rows()?;
        let score = self.head.forward(ctx, pooled)?.sigmoid();
        Ok(DetectorPass {
            frames,
            phonemes,
            pooled,
            score,
        })
    }

    /// Contrastive projector `g`.
    pub fn project<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.projector[0].forward(ctx, x)?.elu();
        self.projector[1].forward(ctx, h)
    }

    /// Bonafide probability of one clip.
    pub fn score(&self, clip: &FrameSequence) -> Result<f64> {
        let frozen = self.frozen_pass(clip)?;
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &self.store);
        Ok(self.forward(&ctx, ctx.constant(frozen.f_init), &frozen.labels)?.score.item())
    }

    pub fn score_all(&self, clips: &[FrameSequence]) -> Result<Vec<f64>> {
        clips.par_iter().map(|c| self.score(c)).collect()
    }

    /// Mean-pooled embedding of one clip at `stage`.
    pub fn embed(&self, clip: &FrameSequence, stage: Stage) -> Result<Vec<f64>> {
        let frozen = self.frozen_pass(clip)?;
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &self.store);
        let pass = self.forward(&ctx, ctx.constant(frozen.f_init), &frozen.labels)?;
        let v = match stage {
            Stage::Frame => pass.frames.mean_rows()?,
            Stage::Phoneme => pass.phonemes.mean_rows()?,
            Stage::PostGat => pass.pooled,
        };
        Ok(v.to_tensor().into_data())
    }

    /// Builds the objective of one batch of frozen passes on `ctx`.
    ///
    /// The real batch gives `L_cls`; with `objective.clip` the projected
    /// fine-tuned frame means are contrasted with the frozen ones; with
    /// `objective.rpsa` the substituted batch is scored against all-fake
    /// targets.
    pub fn batch_loss<'t>(
        &self,
        ctx: &Ctx<'t>,
        batch: &[FrozenPass],
        objective: Objective,
        rpsa_seed: u64,
    ) -> Result<BatchLoss<'t>> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty training batch".into()));
        }
        let mut scores = Vec::with_capacity(batch.len());
        let mut projected = Vec::with_capacity(batch.len());
        let mut anchors = Vec::with_capacity(batch.len());
        for item in batch {
            let pass = self.forward(ctx, ctx.constant(item.f_init.clone()), &item.labels)?;
            scores.push(pass.score);
            if objective.clip {
                projected.push(self.project(ctx, pass.frames.mean_rows()?)?);
                anchors.push(item.frames.mean_rows());
            }
        }
        let targets: Vec<f64> = batch.iter().map(|b| b.class_label.target()).collect();
        let cls = bce(Var::concat_rows(&scores)?, &targets)?;

        let clip = if objective.clip {
            let u = Tensor::from_rows(&anchors)?;
            Some(clip_loss(Var::concat_rows(&projected)?, ctx.constant(u), self.config.tau)?)
        } else {
            None
        };

        let aug = match objective.rpsa {
            Some(p) if batch.len() >= 2 => {
                let seqs = batch.iter().map(FrozenPass::as_sequence).collect::<Result<Vec<_>>>()?;
                let augmented = rpsa(&seqs, p, rpsa_seed)?;
                let mut aug_scores = Vec::with_capacity(augmented.len());
                for s in &augmented {
                    let labels = s.labels.as_deref().unwrap_or_default();
                    aug_scores.push(self.forward(ctx, ctx.constant(s.features.clone()), labels)?.score);
                }
                Some(bce(Var::concat_rows(&aug_scores)?, &vec![0.0; augmented.len()])?)
            }
            _ => None,
        };

        Ok(BatchLoss {
            cls: cls.item(),
            clip: clip.map(|c| c.item()),
            aug: aug.map(|a| a.item()),
            total: total_loss(cls, clip, aug)?,
        })
    }

    /// Writes `config.txt`, the trainable weights and the recognizer
    /// checkpoint in `recognizer/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.recognizer.save(&dir.join(RECOGNIZER_DIR))?;
        let header = Header {
            format: DETECTOR_FORMAT.into(),
            recognizer: RECOGNIZER_DIR.into(),
            detector: self.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        self.store.save_trainable(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Format {
            what: "detector checkpoint config",
            detail: e.to_string(),
        })?;
        if header.format != DETECTOR_FORMAT {
            return Err(Error::Format {
                what: "detector checkpoint config",
                detail: format!("format {:?}, expected {DETECTOR_FORMAT:?}", header.format),
            });
        }
        let recognizer = RecognizerModel::load(&dir.join(&header.recognizer))?;
        let mut model = Self::new(recognizer, header.detector)?;
        model.store.load_trainable(dir)?;
        Ok(model)
    }

    /// Fingerprint of every frozen weight, for checking that training left
    /// the recognizer untouched.
    pub fn frozen_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, p) in self.store.iter().filter(|(_, p)| p.group == ParamGroup::Frozen) {
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
