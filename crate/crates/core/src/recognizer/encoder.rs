use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamGroup, ParamStore};
use crate::tensor::{Tensor, Var};

/// Sinusoidal position table, `frames x width`.
pub fn positional_encoding(frames: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; frames * width];
    for t in 0..frames {
        for i in 0..width {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = t as f64 / rate;
            data[t * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(frames, width, data).expect("positional table")
}

/// Pre-norm self-attention block with an ELU feed-forward.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub mlp_norm: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl EncoderBlock {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width, group),
            query: Linear::new(store, &format!("{name}.query"), width, width, group, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, group, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, group, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, group, rng),
            mlp_norm: LayerNorm::new(store, &format!("{name}.mlp_norm"), width, group),
            mlp_in: Linear::new(store, &format!("{name}.mlp_in"), width, 2 * width, group, rng),
            mlp_out: Linear::new(store, &format!("{name}.mlp_out"), 2 * width, width, group, rng),
        }
    }

    fn duplicate(&self, store: &mut ParamStore, from: &str, to: &str, group: ParamGroup) -> Self {
        Self {
            attn_norm: self.attn_norm.duplicate(store, from, to, group),
            query: self.query.duplicate(store, from, to, group),
            key: self.key.duplicate(store, from, to, group),
            value: self.value.duplicate(store, from, to, group),
            output: self.output.duplicate(store, from, to, group),
            mlp_norm: self.mlp_norm.duplicate(store, from, to, group),
            mlp_in: self.mlp_in.duplicate(store, from, to, group),
            mlp_out: self.mlp_out.duplicate(store, from, to, group),
        }
    }

    fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
        heads: usize,
        attention: Option<&mut Vec<Tensor>>,
    ) -> Result<Var<'t>> {
        let width = x.cols();
        let head_dim = width / heads;
        let h = self.attn_norm.forward(ctx, x)?;
        let q = self.query.forward(ctx, h)?;
        let k = self.key.forward(ctx, h)?;
        let v = self.value.forward(ctx, h)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::new();
        for hd in 0..heads {
            let qh = q.slice_cols(hd * head_dim, head_dim)?;
            let kh = k.slice_cols(hd * head_dim, head_dim)?;
            let vh = v.slice_cols(hd * head_dim, head_dim)?;
            let weights = qh.matmul(&kh.transpose()?)?.scale(scale).softmax_rows()?;
            if attention.is_some() {
                maps.push(weights.to_tensor());
            }
            outs.push(weights.matmul(&vh)?);
        }
        if let Some(a) = attention {
            a.extend(maps);
        }
        let attended = self.output.forward(ctx, Var::concat_cols(&outs)?)?;
        let x = x.add(&attended)?;
        let h = self.mlp_norm.forward(ctx, x)?;
        let h = self.mlp_in.forward(ctx, h)?.elu();
        x.add(&self.mlp_out.forward(ctx, h)?)
    }
}

/// Stack of self-attention blocks over frame features.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<EncoderBlock>,
    pub width: usize,
    pub heads: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        blocks: usize,
        heads: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        let blocks = (0..blocks)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), width, group, rng))
            .collect();
        Ok(Self {
            blocks,
            width,
            heads,
        })
    }

    /// Copies every weight under a new name prefix and group.
    pub fn duplicate(&self, store: &mut ParamStore, from: &str, to: &str, group: ParamGroup) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.duplicate(store, from, to, group))
                .collect(),
            width: self.width,
            heads: self.heads,
        }
    }

    /// Frame features `T x h` to contextual frame features `T x h`. Position
    /// encoding is added in front of the first block; with no blocks the
    /// input passes through untouched.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.run(ctx, x, None)
    }

    /// Like [`Encoder::forward`], also returning every head's attention map
    /// (block-major).
    pub fn forward_with_attention<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Tensor>)> {
        let mut maps = Vec::new();
        let y = self.run(ctx, x, Some(&mut maps))?;
        Ok((y, maps))
    }

    fn run<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
        mut maps: Option<&mut Vec<Tensor>>,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(Error::shape("encode", &shape, &[shape[0], self.width]));
        }
        if self.blocks.is_empty() {
            return Ok(x);
        }
        let pe = ctx.constant(positional_encoding(shape[0], self.width));
        let mut h = x.add(&pe)?;
        for block in &self.blocks {
            h = block.forward(ctx, h, self.heads, maps.as_deref_mut())?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(blocks: usize) -> (ParamStore, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", 8, blocks, 2, ParamGroup::Main, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn zero_blocks_is_identity() {
        let (store, enc) = encoder(0);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x0 = Tensor::randn(&[5, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let y = enc.forward(&ctx, ctx.constant(x0.clone())).unwrap();
        assert_eq!(y.to_tensor(), x0);
    }

    #[test]
    fn single_frame_attends_to_itself() {
        let (store, enc) = encoder(2);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let x = ctx.constant(Tensor::randn(&[1, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
        let (_, maps) = enc.forward_with_attention(&ctx, x).unwrap();
        assert_eq!(maps.len(), 4);
        for m in maps {
            assert_eq!(m.data(), &[1.0]);
        }
    }

    #[test]
    fn position_encoding_breaks_permutation_symmetry() {
        let (store, enc) = encoder(1);
        let x0 = Tensor::randn(&[4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| x0.row(i).to_vec()).collect();
        rows.reverse();
        let x1 = Tensor::from_rows(&rows).unwrap();
        let run = |x: Tensor| {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            enc.forward(&ctx, ctx.constant(x)).unwrap().to_tensor()
        };
        let (y0, y1) = (run(x0), run(x1));
        // row 0 of the reversed input is row 3 of the original
        let diff: f64 = y0.row(3).iter().zip(y1.row(0)).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let (store, enc) = encoder(1);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        assert!(enc.forward(&ctx, ctx.constant(Tensor::zeros(&[3, 6]))).is_err());
    }
}
