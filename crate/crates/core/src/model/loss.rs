use super::config::LossConfig;
use crate::error::{Error, Result};
use crate::tensor::{add, compensated_sum, scale, Tensor};

const CLAMP: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Validate `N × 2 × H × W` logits against `N·H·W` binary labels.
fn check(logits: &Tensor, labels: &[f64]) -> Result<(usize, usize)> {
    let (n, c, h, w) = logits.dims4("loss")?;
    if c != 2 {
        return Err(Error::dims("loss classes", &[2], &[c]));
    }
    if labels.len() != n * h * w {
        return Err(Error::dims("loss labels", &[n, h, w], &[labels.len()]));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::data(format!("label value {bad} is not 0 or 1")));
    }
    Ok((n, h * w))
}

/// Changed-class softmax probability per pixel, in label order.
pub fn change_probability(logits: &Tensor) -> Result<Vec<f64>> {
    let (n, c, h, w) = logits.dims4("change_probability")?;
    if c != 2 {
        return Err(Error::dims("change_probability classes", &[2], &[c]));
    }
    let plane = h * w;
    let z = logits.data();
    let mut p = Vec::with_capacity(n * plane);
    for ni in 0..n {
        let base = ni * 2 * plane;
        p.extend((0..plane).map(|i| sigmoid(z[base + plane + i] - z[base + i])));
    }
    Ok(p)
}

/// Scatter per-pixel derivatives w.r.t. `z1 − z0` back onto the two logits.
fn logit_grad(dd: &[f64], n: usize, plane: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * 2 * plane];
    for ni in 0..n {
        for i in 0..plane {
            let v = dd[ni * plane + i];
            g[ni * 2 * plane + i] = -v;
            g[ni * 2 * plane + plane + i] = v;
        }
    }
    g
}

/// Mean over pixels of `−α (1 − p̂)^γ ln p̂`, `p̂` the probability of the true
/// class clamped to `[1e-7, 1 − 1e-7]`.
pub fn focal_loss(logits: &Tensor, labels: &[f64], cfg: &LossConfig) -> Result<Tensor> {
    let (n, plane) = check(logits, labels)?;
    let z = logits.data();
    let (alpha, gamma) = (cfg.alpha, cfg.gamma);
    let count = (n * plane) as f64;
    let mut terms = vec![0.0; n * plane];
    let mut dd = vec![0.0; n * plane];
    for ni in 0..n {
        let base = ni * 2 * plane;
        for i in 0..plane {
            let d = z[base + plane + i] - z[base + i];
            let y = labels[ni * plane + i];
            let sign = if y == 1.0 { 1.0 } else { -1.0 };
            // p̂ = σ(sign·d), 1 − p̂ = σ(−sign·d)
            let ph = sigmoid(sign * d);
            let q = sigmoid(-sign * d);
            let clamped = ph.clamp(CLAMP, 1.0 - CLAMP);
            let log_p = clamped.ln();
            let mod_factor = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
            terms[ni * plane + i] = -alpha * mod_factor * log_p;
            // dL/dp̂, then dp̂/dd = sign · p̂ (1 − p̂)
            let d_mod = if gamma == 0.0 || q == 0.0 { 0.0 } else { -gamma * q.powf(gamma - 1.0) };
            let d_log = if ph > CLAMP && ph < 1.0 - CLAMP { 1.0 / clamped } else { 0.0 };
            let dl_dph = -alpha * (d_mod * log_p + mod_factor * d_log);
            dd[ni * plane + i] = dl_dph * sign * ph * q / count;
        }
    }
    let total = compensated_sum(terms);
    let grad = logit_grad(&dd, n, plane);
    Ok(Tensor::from_op(vec![total / count], vec![1], &[logits], move |g, _| {
        vec![Some(grad.iter().map(|v| v * g[0]).collect())]
    }))
}

/// Global soft dice: `1 − (2 Σ E·s + ε) / (Σ E + Σ s + ε)`.
pub fn dice_loss(logits: &Tensor, labels: &[f64], cfg: &LossConfig) -> Result<Tensor> {
    let (n, plane) = check(logits, labels)?;
    let s = change_probability(logits)?;
    let eps = cfg.dice_eps;
    let inter = compensated_sum(s.iter().zip(labels).map(|(a, b)| a * b));
    let sum_e = compensated_sum(labels.iter().copied());
    let sum_s = compensated_sum(s.iter().copied());
    let num = 2.0 * inter + eps;
    let den = sum_e + sum_s + eps;
    let dd: Vec<f64> = s
        .iter()
        .zip(labels)
        .map(|(&si, &e)| -(2.0 * e * den - num) / (den * den) * si * (1.0 - si))
        .collect();
    let grad = logit_grad(&dd, n, plane);
    Ok(Tensor::from_op(vec![1.0 - num / den], vec![1], &[logits], move |g, _| {
        vec![Some(grad.iter().map(|v| v * g[0]).collect())]
    }))
}

/// Weighted sum of both losses, with each component's value.
#[derive(Debug, Clone)]
pub struct HybridLoss {
    pub total: Tensor,
    pub focal: f64,
    pub dice: f64,
}

pub fn hybrid_loss(logits: &Tensor, labels: &[f64], cfg: &LossConfig) -> Result<HybridLoss> {
    let f = focal_loss(logits, labels, cfg)?;
    let d = dice_loss(logits, labels, cfg)?;
    let total = add(&scale(&f, cfg.lambda_focal), &scale(&d, cfg.lambda_dice))?;
    Ok(HybridLoss { focal: f.item()?, dice: d.item()?, total })
}
