use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to gradient norms and kernel traces before inversion.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    None,
    GradNorm,
    Ntk,
}

/// `wᵢ = exp(−ε Σ_{j<i} L_j)`.
pub fn causal_weights(chunk_losses: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("causal tolerance {eps} is negative")));
    }
    if chunk_losses.is_empty() {
        return Err(Error::InvalidArgument("no chunks".into()));
    }
    if let Some(l) = chunk_losses.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidArgument(format!("chunk loss {l} is negative or NaN")));
    }
    let mut acc = 0.0;
    Ok(chunk_losses
        .iter()
        .map(|l| {
            let w = (-eps * acc).exp();
            acc += l;
            w
        })
        .collect())
}

/// `λ̂ᵢ = Σⱼ sⱼ / sᵢ` for per-term magnitudes `s` (gradient norms or kernel
/// traces), with `s` floored at [`NORM_FLOOR`].
pub fn balance(scales: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = scales.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::InvalidArgument(format!("term scale {s} is not a finite non-negative number")));
    }
    let floored: Vec<f64> = scales
        .iter()
        .map(|&s| {
            if s < NORM_FLOOR {
                warn!("loss-term gradient scale {s:e} below floor, clamped to {NORM_FLOOR:e}");
                NORM_FLOOR
            } else {
                s
            }
        })
        .collect();
    let total: f64 = floored.iter().sum();
    Ok(floored.iter().map(|s| total / s).collect())
}

fn smooth(hat: Vec<f64>, prev: Option<&[f64]>, ema: f64) -> Result<Vec<f64>> {
    match prev {
        None => Ok(hat),
        Some(p) if p.len() == hat.len() => Ok(p.iter().zip(&hat).map(|(a, b)| ema * a + (1.0 - ema) * b).collect()),
        Some(p) => Err(Error::InvalidArgument(format!("{} previous weights for {} terms", p.len(), hat.len()))),
    }
}

/// Gradient-norm balancing, smoothed as `λ ← ema·λ + (1 − ema)·λ̂`. Without
/// previous weights the raw `λ̂` is returned.
pub fn grad_norm_weights(norms: &[f64], prev: Option<&[f64]>, ema: f64) -> Result<Vec<f64>> {
    smooth(balance(norms)?, prev, ema)
}

/// Kernel-trace balancing with `trᵢ = Σₙ ‖∇_θ rᵢ(xₙ)‖²`.
pub fn ntk_weights(traces: &[f64], prev: Option<&[f64]>, ema: f64) -> Result<Vec<f64>> {
    smooth(balance(traces)?, prev, ema)
}
