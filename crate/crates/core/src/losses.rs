//! Training objectives.
//!
//! `loss_u` is the mean per-pixel GGD negative log-likelihood. Its value is
//! exact; its gradient is taken at `|x̂ − x| + 1e-6` so the `|ε|^(β−1)` factor
//! stays bounded at zero residual when β̂ < 1. Cross-entropies clamp
//! probabilities to `[1e-7, 1 − 1e-7]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggd::{nll_grad_unchecked, nll_unchecked, NllGrad};
use crate::nn::Tensor;

pub const RESIDUAL_EPS: f64 = 1e-6;
pub const PROB_EPS: f64 = 1e-7;

/// Per-pixel GGD parameters predicted by the generator's three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct GgdParamMaps {
    pub x_hat: Tensor,
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl GgdParamMaps {
    pub fn new(x_hat: Tensor, alpha: Tensor, beta: Tensor) -> Result<Self> {
        for t in [&alpha, &beta] {
            if t.shape() != x_hat.shape() {
                return Err(Error::ShapeMismatch {
                    expected: x_hat.shape().to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        if alpha.data().iter().any(|&a| !(a > 0.0)) {
            return Err(Error::invalid("alpha", "scale map must be positive"));
        }
        if beta.data().iter().any(|&b| !(b > 0.0)) {
            return Err(Error::invalid("beta", "shape map must be positive"));
        }
        Ok(Self { x_hat, alpha, beta })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.x_hat.shape()
    }
}

/// Gradients of `loss_u` with respect to each parameter map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMapsGrad {
    pub d_x_hat: Tensor,
    pub d_alpha: Tensor,
    pub d_beta: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
}

impl LossWeights {
    pub fn new(lambda_adv: f64) -> Result<Self> {
        if !(lambda_adv.is_finite() && lambda_adv > 0.0) {
            return Err(Error::invalid(
                "lambda_adv",
                format!("must be > 0, got {lambda_adv}"),
            ));
        }
        Ok(Self { lambda_adv })
    }

    /// Undersampled-reconstruction (quality enhancement) preset.
    pub fn quality_enhancement() -> Self {
        Self { lambda_adv: 1e-3 }
    }

    /// T1 → T2 modality propagation preset.
    pub fn modality_propagation() -> Self {
        Self { lambda_adv: 7e-4 }
    }
}

fn check_maps(pred: &GgdParamMaps, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    let finite = |t: &Tensor| t.data().iter().all(|v| v.is_finite());
    if !(finite(&pred.x_hat) && finite(&pred.alpha) && finite(&pred.beta) && finite(target)) {
        return Err(Error::NonFinite("loss_u inputs"));
    }
    if pred
        .alpha
        .data()
        .iter()
        .chain(pred.beta.data())
        .any(|&v| v <= 0.0)
    {
        return Err(Error::invalid(
            "pred",
            "alpha and beta maps must be positive",
        ));
    }
    Ok(())
}

/// Mean over pixels of `(|x̂−x|/α̂)^β̂ − log(β̂/(2α̂)) + log Γ(1/β̂)`.
pub fn loss_u(pred: &GgdParamMaps, target: &Tensor) -> Result<f64> {
    check_maps(pred, target)?;
    let n = target.len() as f64;
    let sum: f64 = pixels(pred, target)
        .map(|(xh, x, a, b)| nll_unchecked((xh - x).abs(), a, b))
        .sum();
    Ok(sum / n)
}

pub fn loss_u_with_grad(pred: &GgdParamMaps, target: &Tensor) -> Result<(f64, ParamMapsGrad)> {
    check_maps(pred, target)?;
    let shape = target.shape();
    let n = target.len() as f64;
    let mut d_x_hat = Tensor::zeros(shape);
    let mut d_alpha = Tensor::zeros(shape);
    let mut d_beta = Tensor::zeros(shape);
    let mut sum = 0.0;
    for (i, (xh, x, a, b)) in pixels(pred, target).enumerate() {
        let eps = xh - x;
        sum += nll_unchecked(eps.abs(), a, b);
        let g = if eps == 0.0 {
            NllGrad {
                d_xhat: 0.0,
                ..nll_grad_unchecked(RESIDUAL_EPS, a, b)
            }
        } else {
            nll_grad_unchecked(eps.signum() * (eps.abs() + RESIDUAL_EPS), a, b)
        };
        d_x_hat.data_mut()[i] = (g.d_xhat / n) as f32;
        d_alpha.data_mut()[i] = (g.d_alpha / n) as f32;
        d_beta.data_mut()[i] = (g.d_beta / n) as f32;
    }
    Ok((
        sum / n,
        ParamMapsGrad {
            d_x_hat,
            d_alpha,
            d_beta,
        },
    ))
}

fn pixels<'a>(
    pred: &'a GgdParamMaps,
    target: &'a Tensor,
) -> impl Iterator<Item = (f64, f64, f64, f64)> + 'a {
    pred.x_hat
        .data()
        .iter()
        .zip(target.data())
        .zip(pred.alpha.data())
        .zip(pred.beta.data())
        .map(|(((&xh, &x), &a), &b)| (xh as f64, x as f64, a as f64, b as f64))
}

fn check_probs(pred: &[f64], labels: &[f64]) -> Result<()> {
    if pred.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len()],
            actual: vec![pred.len()],
        });
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("probabilities"));
    }
    Ok(())
}

/// Summed binary cross-entropy `−Σ [y log ŷ + (1−y) log(1−ŷ)]`.
pub fn bce(pred_probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_probs(pred_probs, labels)?;
    Ok(pred_probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

/// d bce / d ŷ, evaluated at the clamped probabilities.
pub fn bce_grad(pred_probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check_probs(pred_probs, labels)?;
    Ok(pred_probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -y / p + (1.0 - y) / (1.0 - p)
        })
        .collect())
}

/// `loss_u + λ · bce(D(x̂), 1)`.
pub fn generator_loss(
    pred: &GgdParamMaps,
    target: &Tensor,
    disc_scores_on_fake: &[f64],
    weights: &LossWeights,
) -> Result<f64> {
    let ones = vec![1.0; disc_scores_on_fake.len()];
    Ok(loss_u(pred, target)? + weights.lambda_adv * bce(disc_scores_on_fake, &ones)?)
}

/// `bce(D(x), 1) + bce(D(x̂), 0)` summed over the batch.
pub fn discriminator_loss(scores_on_real: &[f64], scores_on_fake: &[f64]) -> Result<f64> {
    if scores_on_real.len() != scores_on_fake.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![scores_on_real.len()],
            actual: vec![scores_on_fake.len()],
        });
    }
    let ones = vec![1.0; scores_on_real.len()];
    let zeros = vec![0.0; scores_on_fake.len()];
    Ok(bce(scores_on_real, &ones)? + bce(scores_on_fake, &zeros)?)
}
