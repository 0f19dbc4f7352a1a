use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;
/// Added to every norm before cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;
/// Weight of the auxiliary terms in the total objective.
pub const AUX_WEIGHT: f64 = 0.5;

/// Mean binary cross-entropy of `N x 1` probabilities against `targets`.
pub fn bce<'t>(y_hat: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    let shape = y_hat.shape();
    if shape.len() != 2 || shape[1] != 1 || shape[0] != targets.len() || targets.is_empty() {
        return Err(Error::shape("bce", &shape, &[targets.len(), 1]));
    }
    let tape = y_hat.tape();
    let y = tape.constant(Tensor::matrix(targets.len(), 1, targets.to_vec())?);
    let not_y = tape.constant(Tensor::matrix(
        targets.len(),
        1,
        targets.iter().map(|t| 1.0 - t).collect(),
    )?);
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let q = p.neg().add_scalar(1.0);
    let ll = y.mul(&p.ln())?.add(&not_y.mul(&q.ln())?)?;
    Ok(ll.mean().neg())
}

/// Contrastive loss between projected fine-tuned embeddings `g` (`N x C`)
/// and frozen embeddings `u` (`N x C`): row `i` of `g` should match row `i`
/// of `u` among all rows of `u`, with cosine similarity over temperature
/// `tau`.
pub fn clip_loss<'t>(g: Var<'t>, u: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let (gs, us) = (g.shape(), u.shape());
    if gs.len() != 2 || gs != us || gs[0] == 0 {
        return Err(Error::shape("clip_loss", &gs, &us));
    }
    if tau <= 0.0 {
        return Err(Error::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let n = gs[0];
    let gn = g.l2_normalize_rows(COSINE_EPS)?;
    let un = u.l2_normalize_rows(COSINE_EPS)?;
    let logits = gn.matmul(&un.transpose()?)?.scale(1.0 / tau);
    let diag = g.tape().constant(Tensor::eye(n));
    Ok(logits.log_softmax_rows()?.mul(&diag)?.sum().scale(-1.0 / n as f64))
}

/// `L = L_cls + 0.5 (L_clip + L'_cls)`; missing auxiliary terms count as 0.
pub fn total_loss<'t>(cls: Var<'t>, clip: Option<Var<'t>>, aug: Option<Var<'t>>) -> Result<Var<'t>> {
    let aux = match (clip, aug) {
        (Some(c), Some(a)) => Some(c.add(&a)?),
        (c, a) => c.or(a),
    };
    match aux {
        Some(a) => cls.add(&a.scale(AUX_WEIGHT)),
        None => Ok(cls),
    }
}
