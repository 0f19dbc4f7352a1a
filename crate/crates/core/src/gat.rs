//! Phoneme graphs and the graph attention module: three graph attention
//! layers followed by a unidirectional LSTM.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Default forward edge span.
pub const DEFAULT_SPAN: usize = 10;
/// Negative slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Directed graph over phoneme positions (0-based). Node `i` attends to its
/// out-neighbours `{j : i -> j}`, which always include `i` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

/// Edges `i -> min(i + k, T' - 1)` for `k = 1..=span`, deduplicated, plus a
/// self-edge on every node. Edges are sorted by source, then destination.
pub fn build_edges(nodes: usize, span: usize) -> PhonemeGraph {
    let mut edges = Vec::new();
    for i in 0..nodes {
        let last = (i + span).min(nodes - 1);
        edges.extend((i..=last).map(|j| (i, j)));
    }
    PhonemeGraph { nodes, edges }
}

impl PhonemeGraph {
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `N_i` for every node, in ascending order.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes];
        for &(i, j) in &self.edges {
            out[i].push(j);
        }
        out
    }

    /// Row-major `T' x T'` adjacency mask, `mask[i * T' + j]` iff `j` is in `N_i`.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.nodes * self.nodes];
        for &(i, j) in &self.edges {
            m[i * self.nodes + j] = true;
        }
        m
    }
}

/// One single-head graph attention layer. `weight` is `C' x C`, `attention`
/// has length `2 C'`.
#[derive(Clone, Debug)]
pub struct Gal {
    pub weight: ParamId,
    pub attention: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Gal {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let wb = (1.0 / input as f64).sqrt();
        let ab = (1.0 / output as f64).sqrt();
        Self {
            weight: store.add(
                format!("{name}.weight"),
                Tensor::uniform(&[output, input], -wb, wb, rng),
                group,
            ),
            attention: store.add(
                format!("{name}.attention"),
                Tensor::uniform(&[2 * output], -ab, ab, rng),
                group,
            ),
            input,
            output,
        }
    }

    fn check<'t>(&self, x: Var<'t>, graph: &PhonemeGraph) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input || shape[0] != graph.node_count() {
            return Err(Error::shape("gal", &shape, &[graph.node_count(), self.input]));
        }
        Ok(())
    }

    /// Returns `(alpha, W f)` where `alpha` is the dense `T' x T'` coefficient
    /// matrix, zero outside each neighbourhood.
    fn attend<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, graph: &PhonemeGraph) -> Result<(Var<'t>, Var<'t>)> {
        self.check(x, graph)?;
        let h = x.matmul(&ctx.p(self.weight).transpose()?)?;
        let a = ctx.p(self.attention).reshape(&[2 * self.output, 1])?;
        let src = h.matmul(&a.slice_rows(0, self.output)?)?;
        let dst = h.matmul(&a.slice_rows(self.output, self.output)?)?;
        let alpha = src
            .outer_add(&dst)?
            .leaky_relu(ATTENTION_SLOPE)
            .masked_softmax_rows(&graph.mask())?;
        Ok((alpha, h))
    }

    pub fn coefficients<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, graph: &PhonemeGraph) -> Result<Var<'t>> {
        Ok(self.attend(ctx, x, graph)?.0)
    }

    /// `f'_i = ELU(sum_{j in N_i} alpha_ij W f_j)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, graph: &PhonemeGraph) -> Result<Var<'t>> {
        let (alpha, h) = self.attend(ctx, x, graph)?;
        Ok(alpha.matmul(&h)?.elu())
    }
}

/// Single-layer unidirectional LSTM with gate order (input, forget, cell,
/// output) and zero initial state.
#[derive(Clone, Debug)]
pub struct Lstm {
    /// `C x 4H`
    pub input_weight: ParamId,
    /// `H x 4H`
    pub hidden_weight: ParamId,
    /// `4H`; the forget slice starts at 1.
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let b = (1.0 / hidden as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            input_weight: store.add(
                format!("{name}.input_weight"),
                Tensor::uniform(&[input, 4 * hidden], -b, b, rng),
                group,
            ),
            hidden_weight: store.add(
                format!("{name}.hidden_weight"),
                Tensor::uniform(&[hidden, 4 * hidden], -b, b, rng),
                group,
            ),
            bias: store.add(format!("{name}.bias"), bias, group),
            input,
            hidden,
        }
    }

    /// Hidden state at every position, `T x H`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input || shape[0] == 0 {
            return Err(Error::shape("lstm", &shape, &[0, self.input]));
        }
        let hd = self.hidden;
        let projected = x
            .matmul(&ctx.p(self.input_weight))?
            .add_row(&ctx.p(self.bias))?;
        let wh = ctx.p(self.hidden_weight);
        let mut h = ctx.constant(Tensor::zeros(&[1, hd]));
        let mut c = ctx.constant(Tensor::zeros(&[1, hd]));
        let mut outputs = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let z = projected.slice_rows(t, 1)?.add(&h.matmul(&wh)?)?;
            let i = z.slice_cols(0, hd)?.sigmoid();
            let f = z.slice_cols(hd, hd)?.sigmoid();
            let g = z.slice_cols(2 * hd, hd)?.tanh();
            let o = z.slice_cols(3 * hd, hd)?.sigmoid();
            c = f.mul(&c)?.add(&i.mul(&g)?)?;
            h = o.mul(&c.tanh())?;
            outputs.push(h);
        }
        Var::concat_rows(&outputs)
    }
}

/// Three constant-width graph attention layers and an LSTM.
#[derive(Clone, Debug)]
pub struct GatStack {
    pub gals: Vec<Gal>,
    pub lstm: Lstm,
    pub width: usize,
}

pub const GAL_LAYERS: usize = 3;

impl GatStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let gals = (0..GAL_LAYERS)
            .map(|i| Gal::new(store, &format!("{name}.gal{i}"), width, width, group, rng))
            .collect();
        let lstm = Lstm::new(store, &format!("{name}.lstm"), width, width, group, rng);
        Self { gals, lstm, width }
    }

    /// `LSTM(GAL3(GAL2(GAL1(F_p))))`, one output row per phoneme.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, graph: &PhonemeGraph) -> Result<Var<'t>> {
        let mut h = x;
        for gal in &self.gals {
            h = gal.forward(ctx, h, graph)?;
        }
        self.lstm.forward(ctx, h)
    }
}
