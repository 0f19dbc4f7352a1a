use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Records primitive operations so gradients can be replayed in reverse.
///
/// A tape is single-threaded. Build one per forward pass (or per batch),
/// call [`Tape::backward`] once, then drop it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Elu(usize),
    LeakyRelu(usize, f64),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Sum(usize),
    SumRows(usize, f64),
    SumCols(usize, f64),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    OuterAdd(usize, usize),
    SegmentMean(usize, Rc<[(usize, usize)]>),
    Frames(usize, usize, usize),
    LayerNormRows(usize, f64),
    L2NormalizeRows(usize, f64),
    Ctc(usize, Rc<Vec<f64>>),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of a scalar loss with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.get_id(var.id)
    }

    pub(crate) fn get_id(&self, id: usize) -> Option<Tensor> {
        let g = self.grads.get(id)?.as_ref()?;
        Some(Tensor::new(self.shapes[id].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `var`, or zeros when the loss did not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf: its gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse-mode sweep from a scalar loss. The recorded operations are
    /// discarded afterwards; node values stay readable.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for node in nodes.iter_mut() {
            node.op = Op::Leaf;
        }
        self.consumed.set(true);
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_with<F: FnOnce(&mut [f64])>(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    f: F,
) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.len();
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match nodes[id].op.clone() {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            if nodes[a].requires_grad {
                // dA = G B^T
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv.data()[p * m..(p + 1) * m];
                        da[i * k + p] = dot(gi, brow);
                    }
                }
                accumulate(grads, nodes, a, da);
            }
            if nodes[b].requires_grad {
                // dB = A^T G
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        if aip != 0.0 {
                            axpy(aip, gi, &mut db[p * m..(p + 1) * m]);
                        }
                    }
                }
                accumulate(grads, nodes, b, db);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.rows(), out.cols());
            let mut da = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    da[j * r + i] = g[i * c + j];
                }
            }
            accumulate(grads, nodes, a, da);
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, a, g.to_vec());
            accumulate(grads, nodes, b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, a, g.to_vec());
            accumulate(grads, nodes, b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            accumulate(grads, nodes, a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            accumulate(grads, nodes, b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, a, g.to_vec());
            let c = out.cols();
            accumulate_with(grads, nodes, b, |db| {
                for row in g.chunks_exact(c) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::MulRow(a, b) => {
            let c = out.cols();
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            accumulate_with(grads, nodes, a, |da| {
                for (i, v) in g.iter().enumerate() {
                    da[i] += v * bv[i % c];
                }
            });
            accumulate_with(grads, nodes, b, |db| {
                for (i, v) in g.iter().enumerate() {
                    db[i % c] += v * av[i];
                }
            });
        }
        Op::Scale(a, s) => accumulate(grads, nodes, a, g.iter().map(|v| v * s).collect()),
        Op::Shift(a) => accumulate(grads, nodes, a, g.to_vec()),
        Op::Exp(a) => accumulate(
            grads,
            nodes,
            a,
            g.iter().zip(out.data()).map(|(g, y)| g * y).collect(),
        ),
        Op::Log(a) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(nodes[a].value.data())
                .map(|(g, x)| g / x)
                .collect(),
        ),
        Op::Tanh(a) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(out.data())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        ),
        Op::Sigmoid(a) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(out.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        ),
        Op::Elu(a) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(nodes[a].value.data())
                .zip(out.data())
                .map(|((g, x), y)| if *x > 0.0 { *g } else { g * (y + 1.0) })
                .collect(),
        ),
        Op::LeakyRelu(a, slope) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(nodes[a].value.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                .collect(),
        ),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            nodes,
            a,
            g.iter()
                .zip(nodes[a].value.data())
                .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                .collect(),
        ),
        Op::SoftmaxRows(a) => {
            let c = out.cols();
            let mut da = vec![0.0; g.len()];
            for ((dr, gr), yr) in da
                .chunks_exact_mut(c)
                .zip(g.chunks_exact(c))
                .zip(out.data().chunks_exact(c))
            {
                let s = dot(gr, yr);
                for j in 0..c {
                    dr[j] = yr[j] * (gr[j] - s);
                }
            }
            accumulate(grads, nodes, a, da);
        }
        Op::LogSoftmaxRows(a) => {
            let c = out.cols();
            let mut da = vec![0.0; g.len()];
            for ((dr, gr), yr) in da
                .chunks_exact_mut(c)
                .zip(g.chunks_exact(c))
                .zip(out.data().chunks_exact(c))
            {
                let s: f64 = gr.iter().sum();
                for j in 0..c {
                    dr[j] = gr[j] - yr[j].exp() * s;
                }
            }
            accumulate(grads, nodes, a, da);
        }
        Op::Sum(a) => accumulate(grads, nodes, a, vec![g[0]; nodes[a].value.len()]),
        Op::SumRows(a, scale) => {
            let x = &nodes[a].value;
            let c = x.cols();
            let mut da = vec![0.0; x.len()];
            for row in da.chunks_exact_mut(c) {
                row.iter_mut().zip(g).for_each(|(d, v)| *d = v * scale);
            }
            accumulate(grads, nodes, a, da);
        }
        Op::SumCols(a, scale) => {
            let x = &nodes[a].value;
            let c = x.cols();
            let mut da = vec![0.0; x.len()];
            for (r, row) in da.chunks_exact_mut(c).enumerate() {
                row.iter_mut().for_each(|d| *d = g[r] * scale);
            }
            accumulate(grads, nodes, a, da);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p].value.len();
                accumulate(grads, nodes, p, g[offset..offset + len].to_vec());
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (r, c) = (out.rows(), out.cols());
            let mut col = 0;
            for p in parts {
                let pc = nodes[p].value.cols();
                if nodes[p].requires_grad {
                    let mut dp = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * c + col..i * c + col + pc]);
                    }
                    accumulate(grads, nodes, p, dp);
                }
                col += pc;
            }
        }
        Op::SliceRows(a, start) => {
            let c = out.cols();
            accumulate_with(grads, nodes, a, |da| {
                da[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            });
        }
        Op::SliceCols(a, start) => {
            let (r, c) = (out.rows(), out.cols());
            let ac = nodes[a].value.cols();
            accumulate_with(grads, nodes, a, |da| {
                for i in 0..r {
                    for j in 0..c {
                        da[i * ac + start + j] += g[i * c + j];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(grads, nodes, a, g.to_vec()),
        Op::OuterAdd(a, b) => {
            let (r, c) = (out.rows(), out.cols());
            accumulate_with(grads, nodes, a, |da| {
                for i in 0..r {
                    da[i] += g[i * c..(i + 1) * c].iter().sum::<f64>();
                }
            });
            accumulate_with(grads, nodes, b, |db| {
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
            });
        }
        Op::SegmentMean(a, segs) => {
            let c = out.cols();
            accumulate_with(grads, nodes, a, |da| {
                for (k, &(start, count)) in segs.iter().enumerate() {
                    let w = 1.0 / count as f64;
                    let gk = &g[k * c..(k + 1) * c];
                    for t in start..start + count {
                        axpy(w, gk, &mut da[t * c..(t + 1) * c]);
                    }
                }
            });
        }
        Op::Frames(a, kernel, stride) => {
            let ch = nodes[a].value.cols();
            let width = kernel * ch;
            accumulate_with(grads, nodes, a, |da| {
                for (t, gr) in g.chunks_exact(width).enumerate() {
                    let s = t * stride * ch;
                    da[s..s + width]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::LayerNormRows(a, eps) => {
            let x = &nodes[a].value;
            let c = x.cols();
            let mut da = vec![0.0; x.len()];
            for (((dr, gr), yr), xr) in da
                .chunks_exact_mut(c)
                .zip(g.chunks_exact(c))
                .zip(out.data().chunks_exact(c))
                .zip(x.data().chunks_exact(c))
            {
                let (_, inv_std) = moments(xr, eps);
                let mean_g = gr.iter().sum::<f64>() / c as f64;
                let mean_gy = dot(gr, yr) / c as f64;
                for j in 0..c {
                    dr[j] = inv_std * (gr[j] - mean_g - yr[j] * mean_gy);
                }
            }
            accumulate(grads, nodes, a, da);
        }
        Op::L2NormalizeRows(a, eps) => {
            let x = &nodes[a].value;
            let c = x.cols();
            let mut da = vec![0.0; x.len()];
            for ((dr, gr), xr) in da
                .chunks_exact_mut(c)
                .zip(g.chunks_exact(c))
                .zip(x.data().chunks_exact(c))
            {
                let norm = dot(xr, xr).sqrt();
                let d = norm + eps;
                let proj = if norm > 0.0 {
                    dot(gr, xr) / (norm * d * d)
                } else {
                    0.0
                };
                for j in 0..c {
                    dr[j] = gr[j] / d - xr[j] * proj;
                }
            }
            accumulate(grads, nodes, a, da);
        }
        Op::Ctc(a, dlogp) => {
            accumulate(grads, nodes, a, dlogp.iter().map(|v| v * g[0]).collect())
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn matmul_kernel(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data()[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b.data()[p * m..(p + 1) * m], orow);
            }
        }
    }
    out
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward-backward CTC over log-probabilities `T x K` with `blank` index.
/// Returns the negative log-likelihood and its gradient w.r.t. `logp`.
pub(crate) fn ctc_forward_backward(
    logp: &Tensor,
    target: &[usize],
    blank: usize,
) -> (f64, Vec<f64>) {
    let (t_len, k) = (logp.rows(), logp.cols());
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    let lp = |t: usize, c: usize| logp.data()[t * k + c];
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_sum_exp(acc, prev[s - 1]);
            }
            if skip_ok(s) {
                acc = log_sum_exp(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == neg { neg } else { acc + lp(t, ext[s]) };
        }
    }

    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_sum_exp(acc, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = log_sum_exp(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == neg { neg } else { acc + lp(t, ext[s]) };
        }
    }

    let mut log_z = alpha[last + s_len - 1];
    if s_len > 1 {
        log_z = log_sum_exp(log_z, alpha[last + s_len - 2]);
    }

    let mut grad = vec![0.0; t_len * k];
    if log_z.is_finite() {
        for t in 0..t_len {
            for s in 0..s_len {
                let ab = alpha[t * s_len + s] + beta[t * s_len + s];
                if ab == neg {
                    continue;
                }
                grad[t * k + ext[s]] -= (ab - lp(t, ext[s]) - log_z).exp();
            }
        }
    }
    (-log_z, grad)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).unwrap();
        drop(v);
        self.unary(t, op)
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        let v = self.value();
        if v.rank() != 2 {
            return Err(Error::shape(op, v.shape(), &[0, 0]));
        }
        Ok((v.rows(), v.cols()))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let t = Tensor::matrix(a.rows(), b.cols(), matmul_kernel(&a, &b))?;
        drop((a, b));
        Ok(self.binary(other, t, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let (r, c) = self.rank2("transpose")?;
        let v = self.value();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v.data()[i * c + j];
            }
        }
        drop(v);
        Ok(self.unary(Tensor::matrix(c, r, data)?, Op::Transpose(self.id)))
    }

    fn zip_same(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(a.shape().to_vec(), data)?;
        drop((a, b));
        Ok(self.binary(other, t, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    fn row_broadcast(
        &self,
        row: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), row.value());
        if a.rank() != 2 || b.len() != a.cols() {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let c = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % c]))
            .collect();
        let t = Tensor::new(a.shape().to_vec(), data)?;
        drop((a, b));
        Ok(self.binary(row, t, op))
    }

    /// Adds a length-`C` row to every row of an `R x C` matrix.
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.row_broadcast(row, "add_row", |a, b| a + b, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row of an `R x C` matrix elementwise by a length-`C` row.
    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.row_broadcast(row, "mul_row", |a, b| a * b, Op::MulRow(self.id, row.id))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.map(|x| x * s, Op::Scale(self.id, s))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.map(|x| x + c, Op::Shift(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var<'t> {
        self.map(f64::ln, Op::Log(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.map(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.map(sigmoid, Op::Sigmoid(self.id))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&self) -> Var<'t> {
        self.map(elu, Op::Elu(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.map(
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(self.id, slope),
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map(move |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        self.rank2("softmax_rows")?;
        let v = self.value();
        let c = v.cols();
        let mut data = v.data().to_vec();
        drop(v);
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row, None);
        }
        let t = Tensor::new(self.shape(), data)?;
        Ok(self.unary(t, Op::SoftmaxRows(self.id)))
    }

    /// Row softmax restricted to the entries where `mask` is true; masked-out
    /// entries come out as exactly zero. Every row needs at least one entry.
    pub fn masked_softmax_rows(&self, mask: &[bool]) -> Result<Var<'t>> {
        let (r, c) = self.rank2("masked_softmax_rows")?;
        if mask.len() != r * c {
            return Err(Error::shape("masked_softmax_rows", &[r, c], &[mask.len()]));
        }
        if mask.chunks_exact(c).any(|m| !m.iter().any(|&b| b)) {
            return Err(Error::Invalid(
                "masked_softmax_rows: a row has no unmasked entry".into(),
            ));
        }
        let mut data = self.value().data().to_vec();
        for (row, m) in data.chunks_exact_mut(c).zip(mask.chunks_exact(c)) {
            softmax_in_place(row, Some(m));
        }
        let t = Tensor::new(self.shape(), data)?;
        // Same backward as a dense softmax: masked outputs are zero so they
        // receive no gradient.
        Ok(self.unary(t, Op::SoftmaxRows(self.id)))
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        self.rank2("log_softmax_rows")?;
        let v = self.value();
        let c = v.cols();
        let mut data = v.data().to_vec();
        drop(v);
        for row in data.chunks_exact_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::new(self.shape(), data)?;
        Ok(self.unary(t, Op::LogSoftmaxRows(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    fn reduce_rows(&self, mean: bool) -> Result<Var<'t>> {
        let (r, c) = self.rank2("reduce_rows")?;
        let scale = if mean { 1.0 / r as f64 } else { 1.0 };
        let v = self.value();
        let mut out = vec![0.0; c];
        for row in v.data().chunks_exact(c) {
            axpy(scale, row, &mut out);
        }
        drop(v);
        Ok(self.unary(Tensor::matrix(1, c, out)?, Op::SumRows(self.id, scale)))
    }

    /// Column sums as a `1 x C` row (reduction over axis 0).
    pub fn sum_rows(&self) -> Result<Var<'t>> {
        self.reduce_rows(false)
    }

    /// Column means as a `1 x C` row (temporal mean of a frame sequence).
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        self.reduce_rows(true)
    }

    /// Row sums as an `R x 1` column (reduction over axis 1).
    pub fn sum_cols(&self) -> Result<Var<'t>> {
        let (r, c) = self.rank2("sum_cols")?;
        let v = self.value();
        let out: Vec<f64> = v.data().chunks_exact(c).map(|row| row.iter().sum()).collect();
        drop(v);
        Ok(self.unary(Tensor::matrix(r, 1, out)?, Op::SumCols(self.id, 1.0)))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_rows: no inputs".into()))?;
        let blocks: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = blocks.iter().map(|b| &**b).collect();
        let t = Tensor::concat_rows(&refs)?;
        drop(blocks);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.requires(&ids);
        Ok(first.tape.push(t, Op::ConcatRows(ids), rg))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_cols: no inputs".into()))?;
        let blocks: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = blocks[0].rows();
        for b in &blocks {
            if b.rank() != 2 || b.rows() != rows {
                return Err(Error::shape("concat_cols", blocks[0].shape(), b.shape()));
            }
        }
        let cols: usize = blocks.iter().map(|b| b.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in &blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        drop(blocks);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.requires(&ids);
        Ok(first
            .tape
            .push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(ids), rg))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let t = self.value().slice_rows(start, len)?;
        Ok(self.unary(t, Op::SliceRows(self.id, start)))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let (r, c) = self.rank2("slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", &[r, c], &[start, len]));
        }
        let v = self.value();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        drop(v);
        Ok(self.unary(Tensor::matrix(r, len, data)?, Op::SliceCols(self.id, start)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let t = self.to_tensor().reshape(shape)?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    /// `out[i][j] = col[i] + row[j]` for a length-`R` column and length-`C` row.
    pub fn outer_add(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), row.value());
        let (r, c) = (a.len(), b.len());
        let mut data = Vec::with_capacity(r * c);
        for &x in a.data() {
            data.extend(b.data().iter().map(|y| x + y));
        }
        drop((a, b));
        Ok(self.binary(row, Tensor::matrix(r, c, data)?, Op::OuterAdd(self.id, row.id)))
    }

    /// Mean of each `(start, count)` block of rows; one output row per block.
    pub fn segment_mean(&self, segments: &[(usize, usize)]) -> Result<Var<'t>> {
        let (r, c) = self.rank2("segment_mean")?;
        let v = self.value();
        let mut data = Vec::with_capacity(segments.len() * c);
        for &(start, count) in segments {
            if count == 0 || start + count > r {
                return Err(Error::shape("segment_mean", &[r, c], &[start, count]));
            }
            let mut acc = vec![0.0; c];
            for t in start..start + count {
                axpy(1.0, v.row(t), &mut acc);
            }
            data.extend(acc.iter().map(|x| x / count as f64));
        }
        drop(v);
        let t = Tensor::matrix(segments.len(), c, data)?;
        Ok(self.unary(t, Op::SegmentMean(self.id, segments.into())))
    }

    /// Sliding windows over rows (im2col): an `L x C` input becomes
    /// `T' x (kernel * C)` with `T' = (L - kernel) / stride + 1`.
    pub fn frames(&self, kernel: usize, stride: usize) -> Result<Var<'t>> {
        let (l, c) = self.rank2("frames")?;
        if kernel == 0 || stride == 0 || l < kernel {
            return Err(Error::shape("frames", &[l, c], &[kernel, stride]));
        }
        let out_len = (l - kernel) / stride + 1;
        let v = self.value();
        let mut data = Vec::with_capacity(out_len * kernel * c);
        for t in 0..out_len {
            let s = t * stride * c;
            data.extend_from_slice(&v.data()[s..s + kernel * c]);
        }
        drop(v);
        let t = Tensor::matrix(out_len, kernel * c, data)?;
        Ok(self.unary(t, Op::Frames(self.id, kernel, stride)))
    }

    /// Normalizes each row to zero mean and unit variance.
    pub fn layer_norm_rows(&self, eps: f64) -> Result<Var<'t>> {
        let (_, c) = self.rank2("layer_norm_rows")?;
        let mut data = self.value().data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let (mean, inv_std) = moments(row, eps);
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv_std);
        }
        let t = Tensor::new(self.shape(), data)?;
        Ok(self.unary(t, Op::LayerNormRows(self.id, eps)))
    }

    /// Divides each row by `norm + eps`.
    pub fn l2_normalize_rows(&self, eps: f64) -> Result<Var<'t>> {
        let (_, c) = self.rank2("l2_normalize_rows")?;
        let mut data = self.value().data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let d = dot(row, row).sqrt() + eps;
            row.iter_mut().for_each(|x| *x /= d);
        }
        let t = Tensor::new(self.shape(), data)?;
        Ok(self.unary(t, Op::L2NormalizeRows(self.id, eps)))
    }

    /// Negative log-likelihood of `target` under the CTC collapse rule, given
    /// per-frame log-probabilities. The caller validates feasibility.
    pub(crate) fn ctc_nll(&self, target: &[usize], blank: usize) -> Result<Var<'t>> {
        self.rank2("ctc")?;
        let (nll, grad) = ctc_forward_backward(&self.value(), target, blank);
        Ok(self.unary(Tensor::scalar(nll), Op::Ctc(self.id, Rc::new(grad))))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let on = |j: usize| mask.is_none_or(|m| m[j]);
    let m = row
        .iter()
        .enumerate()
        .filter(|(j, _)| on(*j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        *x = if on(j) { (*x - m).exp() } else { 0.0 };
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
