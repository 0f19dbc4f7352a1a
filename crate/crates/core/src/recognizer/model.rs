use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{greedy_decode, Encoder, FrontEnd, RecognizerConfig};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamGroup, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const RECOGNIZER_FORMAT: &str = "recognizer-v1";
pub(crate) const CONFIG_FILE: &str = "config.txt";

/// Front end, encoder and phoneme head with their weights.
#[derive(Clone, Debug)]
pub struct RecognizerModel {
    pub config: RecognizerConfig,
    pub store: ParamStore,
    pub frontend: FrontEnd,
    pub encoder: Encoder,
    pub head: Linear,
}

/// Intermediate values of one recognizer pass, still on the tape.
pub struct RecognizerPass<'t> {
    pub f_init: Var<'t>,
    pub frames: Var<'t>,
    pub logits: Var<'t>,
}

/// Plain-tensor result of an inference pass.
#[derive(Clone, Debug)]
pub struct Recognition {
    pub f_init: Tensor,
    pub frames: Tensor,
    pub logits: Tensor,
    pub frame_labels: Vec<usize>,
    pub phonemes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    recognizer: RecognizerConfig,
}

impl RecognizerModel {
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let group = ParamGroup::Main;
        let frontend = FrontEnd::new(&mut store, &config, group, &mut rng);
        let encoder = Encoder::new(
            &mut store,
            "encoder",
            config.width,
            config.blocks,
            config.heads,
            group,
            &mut rng,
        )?;
        let head = Linear::new(
            &mut store,
            "head",
            config.width,
            config.phonemes + 1,
            group,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            frontend,
            encoder,
            head,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, input: Var<'t>) -> Result<RecognizerPass<'t>> {
        let f_init = self.frontend.forward(ctx, input)?;
        let frames = self.encoder.forward(ctx, f_init)?;
        let logits = self.head.forward(ctx, frames)?;
        Ok(RecognizerPass {
            f_init,
            frames,
            logits,
        })
    }

    /// Runs the whole recognizer without recording gradients.
    pub fn recognize(&self, input: &Tensor) -> Result<Recognition> {
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &self.store);
        let pass = self.forward(&ctx, ctx.constant(input.clone()))?;
        let logits = pass.logits.to_tensor();
        let (phonemes, frame_labels) = greedy_decode(&logits);
        Ok(Recognition {
            f_init: pass.f_init.to_tensor(),
            frames: pass.frames.to_tensor(),
            logits,
            frame_labels,
            phonemes,
        })
    }

    /// Input frames (`L x input_channels`) to initial features `T' x h`.
    pub fn extract_features(&self, input: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &self.store);
        Ok(self.frontend.forward(&ctx, ctx.constant(input.clone()))?.to_tensor())
    }

    /// Initial features `T' x h` to frame-level features `T' x h`.
    pub fn encode(&self, f_init: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &self.store);
        Ok(self.encoder.forward(&ctx, ctx.constant(f_init.clone()))?.to_tensor())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = Header {
            format: RECOGNIZER_FORMAT.into(),
            recognizer: self.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        self.store.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Format {
            what: "recognizer checkpoint config",
            detail: e.to_string(),
        })?;
        if header.format != RECOGNIZER_FORMAT {
            return Err(Error::Format {
                what: "recognizer checkpoint config",
                detail: format!("format {:?}, expected {RECOGNIZER_FORMAT:?}", header.format),
            });
        }
        let mut model = Self::new(header.recognizer, 0)?;
        model.store.load(dir)?;
        Ok(model)
    }
}
