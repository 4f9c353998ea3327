use std::f64::consts::PI;

use super::{GaussianDiag, GaussianVars};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `Σᵢ −½ln 2π − ½ log σᵢ² − (pᵢ − μᵢ)² / 2σᵢ²` per row, `[batch]`.
pub fn gaussian_logpdf_vars(tape: &mut Tape, point: Var, q: GaussianVars) -> Result<Var> {
    let diff = tape.sub(point, q.mean)?;
    let sq = tape.square(diff)?;
    let neg_lv = tape.neg(q.log_variance)?;
    let inv_var = tape.exp(neg_lv)?;
    let scaled = tape.mul(sq, inv_var)?;
    let inner = tape.add(scaled, q.log_variance)?;
    let inner = tape.add_scalar(inner, (2.0 * PI).ln())?;
    let per_dim = tape.scale(inner, -0.5)?;
    tape.sum(per_dim, Some(1))
}

/// Standard-normal log density per row, `[batch]`.
pub fn standard_normal_logpdf_vars(tape: &mut Tape, point: Var) -> Result<Var> {
    let d = tape.shape(point)[1] as f64;
    let sq = tape.square(point)?;
    let s = tape.sum(sq, Some(1))?;
    let half = tape.scale(s, -0.5)?;
    tape.add_scalar(half, -0.5 * d * (2.0 * PI).ln())
}

/// Masked Bernoulli log-likelihood per row in logit space:
/// `−Σ m ⊙ [x·softplus(−ℓ) + (1 − x)·softplus(ℓ)]`, `[batch]`.
pub fn bernoulli_loglik_vars(tape: &mut Tape, scene: &Tensor, logits: Var, mask: Option<&Tensor>) -> Result<Var> {
    if tape.shape(logits) != scene.shape() {
        return Err(Error::shape(
            "bernoulli_loglik",
            format!("logits {:?} vs scene {:?}", tape.shape(logits), scene.shape()),
        ));
    }
    let (on, off): (Vec<f64>, Vec<f64>) = match mask {
        Some(m) => {
            if m.shape() != scene.shape() {
                return Err(Error::shape("bernoulli_loglik", "mask shape differs from scene"));
            }
            scene.data().iter().zip(m.data()).map(|(x, m)| (m * x, m * (1.0 - x))).unzip()
        }
        None => scene.data().iter().map(|x| (*x, 1.0 - x)).unzip(),
    };
    let shape = scene.shape().to_vec();
    let on = Tensor::new(shape.clone(), on)?;
    let off = Tensor::new(shape, off)?;
    let neg = tape.neg(logits)?;
    let sp_neg = tape.softplus(neg)?;
    let sp_pos = tape.softplus(logits)?;
    let a = tape.mask_mul(sp_neg, &on)?;
    let b = tape.mask_mul(sp_pos, &off)?;
    let nll = tape.add(a, b)?;
    let row = tape.sum(nll, Some(1))?;
    tape.neg(row)
}

pub fn gaussian_logpdf(point: &Tensor, q: &GaussianDiag) -> Result<f64> {
    if point.shape() != q.mean.shape() || q.mean.shape() != q.log_variance.shape() {
        return Err(Error::shape("gaussian_logpdf", "point, mean and log-variance must agree"));
    }
    Ok(point
        .data()
        .iter()
        .zip(q.mean.data())
        .zip(q.log_variance.data())
        .map(|((p, m), lv)| -0.5 * (2.0 * PI).ln() - 0.5 * lv - (p - m).powi(2) / (2.0 * lv.exp()))
        .sum())
}

pub fn standard_normal_logpdf(point: &[f64]) -> f64 {
    point.iter().map(|p| -0.5 * (2.0 * PI).ln() - 0.5 * p * p).sum()
}

/// Scalar version of [`bernoulli_loglik_vars`] over all elements.
pub fn bernoulli_loglik(scene: &Tensor, logits: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    if scene.shape() != logits.shape() || mask.is_some_and(|m| m.shape() != scene.shape()) {
        return Err(Error::shape("bernoulli_loglik", "scene, logits and mask must agree"));
    }
    let mut total = 0.0;
    for (i, (&x, &l)) in scene.data().iter().zip(logits.data()).enumerate() {
        let m = mask.map_or(1.0, |m| m.data()[i]);
        if m != 0.0 {
            total -= m * (x * softplus(-l) + (1.0 - x) * softplus(l));
        }
    }
    Ok(total)
}
