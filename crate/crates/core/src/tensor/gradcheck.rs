use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many coordinates, sampled with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_err: f64,
    /// First coordinate whose analytic or numeric derivative was not finite.
    pub non_finite: Option<usize>,
    pub passed: bool,
}

/// Compares the tape gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradcheck<F>(f: F, x: &Tensor, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv)?;
        let grads = tape.backward(y)?;
        grads.get_or_zeros(xv)
    };
    compare_gradients(
        &analytic,
        |probe| {
            let tape = Tape::new();
            let xv = tape.constant(probe.clone());
            Ok(f(&tape, xv)?.item())
        },
        x,
        opts,
    )
}

/// Compares a precomputed analytic gradient of `eval` at `x` against central
/// differences.
pub fn compare_gradients<E>(
    analytic: &Tensor,
    eval: E,
    x: &Tensor,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    E: Fn(&Tensor) -> Result<f64>,
{
    let indices: Vec<usize> = match opts.max_coords {
        Some(k) if k < x.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, x.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..x.len()).collect(),
    };

    let mut coords = Vec::with_capacity(indices.len());
    let mut non_finite = None;
    let mut max_rel_err: f64 = 0.0;
    let mut probe = x.clone();
    for i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - opts.step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic.data()[i];
        let rel_err = if a.is_finite() && numeric.is_finite() {
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor)
        } else {
            non_finite.get_or_insert(i);
            f64::INFINITY
        };
        max_rel_err = max_rel_err.max(rel_err);
        coords.push(CoordCheck {
            index: i,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    Ok(GradcheckReport {
        passed: non_finite.is_none() && max_rel_err < opts.tol,
        coords,
        max_rel_err,
        non_finite,
    })
}
