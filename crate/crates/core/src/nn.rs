//! Parameter storage, tape bindings and the small layers shared by every model.

use std::cell::RefCell;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    compare_gradients, read_ptns, write_ptns, GradcheckOptions, GradcheckReport, Gradients, Tape, Tensor,
    Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Never updated; bound as a constant.
    Frozen,
    /// The fine-tuned copy of a pretrained encoder.
    Encoder,
    Main,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
}

/// Flat, named parameter storage. Layers hold [`ParamId`]s into it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn set_group(&mut self, id: ParamId, group: ParamGroup) {
        self.params[id.0].group = group;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter()
            .filter(|(_, p)| p.group != ParamGroup::Frozen)
            .map(|(id, _)| id)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Writes one `<name>.ptns` file per parameter under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_where(dir, |_| true)
    }

    /// Replaces every parameter value with the matching file under `dir`.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        self.load_where(dir, |_| true)
    }

    /// Like [`ParamStore::save`], skipping frozen parameters.
    pub fn save_trainable(&self, dir: &Path) -> Result<()> {
        self.save_where(dir, |p| p.group != ParamGroup::Frozen)
    }

    /// Like [`ParamStore::load`], leaving frozen parameters untouched.
    pub fn load_trainable(&mut self, dir: &Path) -> Result<()> {
        self.load_where(dir, |p| p.group != ParamGroup::Frozen)
    }

    fn save_where(&self, dir: &Path, keep: impl Fn(&Param) -> bool) -> Result<()> {
        for p in self.params.iter().filter(|p| keep(p)) {
            write_ptns(dir.join(format!("{}.ptns", p.name)), &p.value)?;
        }
        Ok(())
    }

    fn load_where(&mut self, dir: &Path, keep: impl Fn(&Param) -> bool) -> Result<()> {
        for p in self.params.iter_mut().filter(|p| keep(p)) {
            let t = read_ptns(dir.join(format!("{}.ptns", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!(
                        "{} has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    ),
                });
            }
            p.value = t;
        }
        Ok(())
    }
}

/// Binds store parameters onto a tape on first use.
///
/// Frozen parameters, and every parameter of an inference binding, enter the
/// tape as constants.
pub struct Ctx<'t> {
    tape: &'t Tape,
    store: &'t ParamStore,
    train: bool,
    bound: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore) -> Self {
        Self {
            tape,
            store,
            train: true,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn inference(tape: &'t Tape, store: &'t ParamStore) -> Self {
        Self {
            train: false,
            ..Self::new(tape, store)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore {
        self.store
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let param = self.store.get(id);
        let v = if self.train && param.group != ParamGroup::Frozen {
            self.tape.param(param.value.clone())
        } else {
            self.tape.constant(param.value.clone())
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Uses `var` in place of the stored value of `id` (finite-difference probes).
    pub fn bind(&self, id: ParamId, var: Var<'t>) {
        self.bound.borrow_mut()[id.0] = Some(var);
    }

    pub fn constant(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if self.store.params[i].group == ParamGroup::Frozen {
                    return None;
                }
                grads.get(v).map(|g| (ParamId(i), g))
            })
            .collect()
    }
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[input, output], -bound, bound, rng),
            group,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]), group);
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(&ctx.p(self.weight))?.add_row(&ctx.p(self.bias))
    }

    pub fn duplicate(&self, store: &mut ParamStore, from: &str, to: &str, group: ParamGroup) -> Self {
        Self {
            weight: copy_param(store, self.weight, from, to, group),
            bias: copy_param(store, self.bias, from, to, group),
        }
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, group: ParamGroup) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0), group),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]), group),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm_rows(LAYER_NORM_EPS)?
            .mul_row(&ctx.p(self.gain))?
            .add_row(&ctx.p(self.bias))
    }

    pub fn duplicate(&self, store: &mut ParamStore, from: &str, to: &str, group: ParamGroup) -> Self {
        Self {
            gain: copy_param(store, self.gain, from, to, group),
            bias: copy_param(store, self.bias, from, to, group),
        }
    }
}

/// Appends a copy of `id`, renaming the `from` prefix to `to`.
pub fn copy_param(store: &mut ParamStore, id: ParamId, from: &str, to: &str, group: ParamGroup) -> ParamId {
    let p = store.get(id).clone();
    let name = match p.name.strip_prefix(from) {
        Some(rest) => format!("{to}{rest}"),
        None => format!("{to}.{}", p.name),
    };
    store.add(name, p.value, group)
}

/// Finite-difference check of `f(ctx, x)` with respect to `x`, where the
/// model parameters come from `store`.
pub fn gradcheck_ctx<F>(
    store: &ParamStore,
    x: &Tensor,
    f: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&Ctx<'t>, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let xv = tape.param(x.clone());
        let y = f(&ctx, xv)?;
        tape.backward(y)?.get_or_zeros(xv)
    };
    let eval = |probe: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        Ok(f(&ctx, tape.constant(probe.clone()))?.item())
    };
    compare_gradients(&analytic, eval, x, opts)
}

/// Finite-difference check with respect to one stored parameter; every other
/// parameter keeps its stored value.
pub fn gradcheck_param<F>(
    store: &ParamStore,
    id: ParamId,
    f: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&Ctx<'t>) -> Result<Var<'t>>,
{
    gradcheck_ctx(
        store,
        store.value(id),
        |ctx, x| {
            ctx.bind(id, x);
            f(ctx)
        },
        opts,
    )
}
