//! Likelihood, KL and reparameterization primitives.

use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1)
    y + (-(-y).exp()).ln_1p()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { expected: a, actual: b });
    }
    Ok(())
}

/// Negative log-likelihood of independent Bernoulli bins, summed over bins.
pub fn bernoulli_nll(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total)
}

/// Gradient of [`bernoulli_nll`] with respect to each probability. Zero
/// where the clamp is active.
pub fn bernoulli_nll_grad(probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check_lengths(probs.len(), labels.len())?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else {
                -y / p + (1.0 - y) / (1.0 - p)
            }
        })
        .collect())
}

/// `KL(N(mean, scale²) ‖ N(0, prior_scale²))`.
pub fn gaussian_kl(mean: f64, scale: f64, prior_scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale(scale));
    }
    if !(prior_scale > 0.0) {
        return Err(Error::NonPositiveScale(prior_scale));
    }
    let ratio = scale / prior_scale;
    Ok(-ratio.ln() + (scale * scale + mean * mean) / (2.0 * prior_scale * prior_scale) - 0.5)
}

/// Partial derivatives of [`gaussian_kl`] with respect to `(mean, scale)`.
pub fn gaussian_kl_grad(mean: f64, scale: f64, prior_scale: f64) -> (f64, f64) {
    let pv = prior_scale * prior_scale;
    (mean / pv, -1.0 / scale + scale / pv)
}

/// `nll + kl_weight · kl_total`.
pub fn elbo_loss(nll: f64, kl_total: f64, kl_weight: f64) -> Result<f64> {
    if kl_total < 0.0 {
        return Err(Error::NegativeKl(kl_total));
    }
    if !(kl_weight >= 0.0 && kl_weight.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kl_weight must be >= 0, got {kl_weight}"
        )));
    }
    Ok(nll + kl_weight * kl_total)
}

/// `w = mean + softplus(raw_scale) ⊙ ε`. With `epsilon == None`, ε is drawn
/// standard normal from `seed`.
pub fn reparameterize(mean: &Tensor, raw_scale: &Tensor, epsilon: Option<&Tensor>, seed: u64) -> Result<Tensor> {
    if mean.shape() != raw_scale.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mean {:?} vs raw_scale {:?}",
            mean.shape(),
            raw_scale.shape()
        )));
    }
    let eps: Vec<f64> = match epsilon {
        Some(e) if e.shape() != mean.shape() => {
            return Err(Error::ShapeMismatch(format!(
                "mean {:?} vs epsilon {:?}",
                mean.shape(),
                e.shape()
            )))
        }
        Some(e) => e.data().to_vec(),
        None => {
            let mut rng = rng_from_seed(seed);
            (0..mean.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let w = mean
        .data()
        .iter()
        .zip(raw_scale.data())
        .zip(&eps)
        .map(|((m, r), e)| m + softplus(*r) * e)
        .collect();
    Ok(Tensor::from_raw(mean.shape().to_vec(), w))
}
