use rand::Rng;

use super::RecognizerConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamGroup, ParamStore};
use crate::tensor::Var;

/// Strided 1-D convolution over the time axis followed by ELU.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: usize,
    pub stride: usize,
    /// Weight has shape `(kernel * in_channels) x out_channels`.
    pub linear: Linear,
}

impl Conv1d {
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let windows = x.frames(self.kernel, self.stride)?;
        Ok(self.linear.forward(ctx, windows)?.elu())
    }
}

/// Feature extractor (conv stack) plus projector (layer norm and linear).
#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub convs: Vec<Conv1d>,
    pub norm: LayerNorm,
    pub projection: Linear,
    min_len: usize,
    input_channels: usize,
}

impl FrontEnd {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &RecognizerConfig,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let mut channels = config.input_channels;
        let mut convs = Vec::new();
        for (i, ((&k, &s), &c)) in config
            .conv_kernels
            .iter()
            .zip(&config.conv_strides)
            .zip(&config.conv_channels)
            .enumerate()
        {
            let linear = Linear::new(store, &format!("frontend.conv{i}"), k * channels, c, group, rng);
            convs.push(Conv1d {
                kernel: k,
                stride: s,
                linear,
            });
            channels = c;
        }
        let norm = LayerNorm::new(store, "frontend.norm", channels, group);
        let projection = Linear::new(store, "frontend.projection", channels, config.width, group, rng);
        Self {
            convs,
            norm,
            projection,
            min_len: config.min_input_len(),
            input_channels: config.input_channels,
        }
    }

    /// `L x input_channels` input to `T' x h` initial features.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, input: Var<'t>) -> Result<Var<'t>> {
        let shape = input.shape();
        if shape.len() != 2 || shape[1] != self.input_channels {
            return Err(Error::shape(
                "extract_features",
                &shape,
                &[shape.first().copied().unwrap_or(0), self.input_channels],
            ));
        }
        if shape[0] < self.min_len {
            return Err(Error::InputTooShort {
                len: shape[0],
                min: self.min_len,
            });
        }
        let mut x = input;
        for conv in &self.convs {
            x = conv.forward(ctx, x)?;
        }
        let x = self.norm.forward(ctx, x)?;
        self.projection.forward(ctx, x)
    }

    pub fn min_input_len(&self) -> usize {
        self.min_len
    }
}
