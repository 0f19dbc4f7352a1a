//! Finite-difference gradient checks over every trainable block and loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detector::{bce, clip_loss, total_loss, DetectorConfig, DetectorModel, FrozenPass, Objective};
use crate::error::Result;
use crate::nn::{gradcheck_ctx, gradcheck_param, Ctx, ParamStore};
use crate::recognizer::{ctc_loss, RecognizerConfig, RecognizerModel};
use crate::phoneme::ClassLabel;
use crate::tensor::{gradcheck, GradcheckOptions, GradcheckReport, Tensor, Var};

/// Coordinates sampled per checked tensor.
const COORDS_PER_TENSOR: usize = 6;

/// Outcome of one block of the suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: String,
    /// Coordinates compared.
    pub coords: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Default)]
struct Tally {
    coords: usize,
    max_rel_err: f64,
    passed: bool,
}

impl Tally {
    fn new() -> Self {
        Self {
            passed: true,
            ..Default::default()
        }
    }

    fn add(&mut self, r: &GradcheckReport) {
        self.coords += r.coords.len();
        self.max_rel_err = self.max_rel_err.max(r.max_rel_err);
        self.passed &= r.passed;
    }

    fn finish(self, block: &str) -> BlockCheck {
        BlockCheck {
            block: block.into(),
            coords: self.coords,
            max_rel_err: self.max_rel_err,
            passed: self.passed,
        }
    }
}

fn params_check<F>(store: &ParamStore, prefixes: &[&str], f: F, opts: &GradcheckOptions) -> Result<Tally>
where
    F: for<'t> Fn(&Ctx<'t>) -> Result<Var<'t>>,
{
    let mut tally = Tally::new();
    let ids: Vec<_> = store
        .trainable()
        .filter(|&id| prefixes.iter().any(|p| store.get(id).name.starts_with(p)))
        .collect();
    for id in ids {
        tally.add(&gradcheck_param(store, id, &f, opts)?);
    }
    Ok(tally)
}

fn recognizer_ctc<'t>(model: &RecognizerModel, ctx: &Ctx<'t>, input: &Tensor, target: &[usize]) -> Result<Var<'t>> {
    let pass = model.forward(ctx, ctx.constant(input.clone()))?;
    ctc_loss(pass.logits, target)
}

/// Random piecewise-constant frame labels with a few runs.
fn random_labels<R: Rng + ?Sized>(frames: usize, phonemes: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let p = rng.random_range(0..phonemes);
        let len = rng.random_range(1..=3);
        out.extend(std::iter::repeat_n(p, len));
    }
    out.truncate(frames);
    out
}

/// Runs the suite on a randomly initialised model of shape `cfg`. Inputs are
/// kept short so that the whole suite stays cheap.
pub fn gradient_suite(cfg: &RecognizerConfig, seed: u64) -> Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradcheckOptions {
        max_coords: Some(COORDS_PER_TENSOR),
        seed,
        ..Default::default()
    };
    let classes = cfg.phonemes + 1;
    let recognizer = RecognizerModel::new(cfg.clone(), seed)?;
    let len = cfg.min_input_len() + 3 * cfg.stride_product();
    let input = Tensor::randn(&[len, cfg.input_channels], 1.0, &mut rng);
    let frames = cfg.output_frames(len).unwrap_or(1);
    let target: Vec<usize> = (0..frames.div_ceil(3).max(1))
        .map(|_| rng.random_range(0..cfg.phonemes))
        .collect();

    let mut out = Vec::new();
    let mut front = params_check(&recognizer.store, &["frontend."], |ctx| recognizer_ctc(&recognizer, ctx, &input, &target), &opts)?;
    front.add(&gradcheck_ctx(
        &recognizer.store,
        &input,
        |ctx, x| ctc_loss(recognizer.forward(ctx, x)?.logits, &target),
        &opts,
    )?);
    out.push(front.finish("conv front-end"));
    out.push(params_check(&recognizer.store, &["encoder."], |ctx| recognizer_ctc(&recognizer, ctx, &input, &target), &opts)?.finish("encoder"));
    out.push(params_check(&recognizer.store, &["head."], |ctx| recognizer_ctc(&recognizer, ctx, &input, &target), &opts)?.finish("phoneme head"));

    let logits = Tensor::randn(&[frames.max(target.len() * 2), classes], 1.0, &mut rng);
    let mut ctc = Tally::new();
    ctc.add(&gradcheck(|_, x| ctc_loss(x, &target), &logits, &opts)?);
    out.push(ctc.finish("ctc loss"));

    let detector = DetectorModel::new(
        recognizer.clone(),
        DetectorConfig {
            seed,
            ..Default::default()
        },
    )?;
    let batch: Vec<FrozenPass> = (0..3)
        .map(|i| {
            let x = Tensor::randn(&[len, cfg.input_channels], 1.0, &mut rng);
            let r = recognizer.recognize(&x)?;
            let labels = random_labels(r.frame_labels.len(), cfg.phonemes, &mut rng);
            Ok(FrozenPass {
                sample_id: format!("s{i}"),
                class_label: if i % 2 == 0 { ClassLabel::Bonafide } else { ClassLabel::Fake },
                f_init: r.f_init,
                frames: r.frames,
                labels,
            })
        })
        .collect::<Result<_>>()?;
    let objective = Objective {
        clip: true,
        rpsa: Some(0.5),
    };
    let rpsa_seed = rng.random();
    for (block, prefixes) in [
        ("copied encoder", &["copied_encoder."][..]),
        ("graph attention layers", &["gat.gal"][..]),
        ("lstm", &["gat.lstm"][..]),
        ("classifier head", &["classifier."][..]),
        ("contrastive projector", &["projector."][..]),
    ] {
        out.push(params_check(&detector.store, prefixes, |ctx| Ok(detector.batch_loss(ctx, &batch, objective, rpsa_seed)?.total), &opts)?.finish(block));
    }
    let mut all = Tally::new();
    all.add(&gradcheck_ctx(
        &detector.store,
        &batch[0].f_init,
        |ctx, x| {
            let pass = detector.forward(ctx, x, &batch[0].labels)?;
            let cls = bce(pass.score, &[1.0])?;
            let u = ctx.constant(Tensor::from_rows(&[batch[0].frames.mean_rows()])?);
            let clip = clip_loss(detector.project(ctx, pass.frames.mean_rows()?)?, u, detector.config.tau)?;
            total_loss(cls, Some(clip), None)
        },
        &opts,
    )?);
    out.push(all.finish("composite loss"));

    let width = cfg.width;
    let g = Tensor::randn(&[4, width], 1.0, &mut rng);
    let u = Tensor::randn(&[4, width], 1.0, &mut rng);
    let mut clip = Tally::new();
    clip.add(&gradcheck(
        |tape, x| clip_loss(x, tape.constant(u.clone()), detector.config.tau),
        &g,
        &opts,
    )?);
    out.push(clip.finish("contrastive loss"));

    let p = Tensor::uniform(&[5, 1], 0.05, 0.95, &mut rng);
    let y: Vec<f64> = (0..5).map(|_| f64::from(rng.random::<bool>())).collect();
    let mut cls = Tally::new();
    cls.add(&gradcheck(|_, x| bce(x, &y), &p, &opts)?);
    out.push(cls.finish("binary cross-entropy"));
    Ok(out)
}

/// Plain-text pass/fail table.
pub fn render_checks(checks: &[BlockCheck]) -> String {
    let mut s = format!("{:<24} {:>7} {:>12}  result\n", "block", "coords", "max rel err");
    for c in checks {
        let _ = writeln!(
            s,
            "{:<24} {:>7} {:>12.3e}  {}",
            c.block,
            c.coords,
            c.max_rel_err,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}
