use super::Tensor;
use crate::error::{Error, Result};

/// Per-channel statistics measured on a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance, the form tracked by running averages.
    pub var_unbiased: Vec<f64>,
}

/// Per-channel normalisation of an NCHW tensor over (N, H, W) followed by a
/// learnable scale and shift.
///
/// With `running = None` the batch statistics are used (training) and
/// returned; otherwise the supplied `(mean, var)` are used as constants.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Result<(Tensor, Option<BatchStats>)> {
    let (n, c, h, w) = x.dims4("batch_norm")?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::dims("batch_norm affine", &[c], gamma.shape()));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let channel_ranges =
        |ci: usize| (0..n).map(move |ni| ((ni * c + ci) * plane, (ni * c + ci + 1) * plane));

    let (mean, var, stats) = match running {
        Some((m, v)) => {
            if m.len() != c || v.len() != c {
                return Err(Error::dims("batch_norm running stats", &[c], &[m.len()]));
            }
            (m.to_vec(), v.to_vec(), None)
        }
        None => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let s: f64 = channel_ranges(ci).map(|(a, b)| x.data()[a..b].iter().sum::<f64>()).sum();
                let m = s / count;
                let sq: f64 = channel_ranges(ci)
                    .map(|(a, b)| x.data()[a..b].iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                    .sum();
                mean[ci] = m;
                var[ci] = sq / count;
            }
            let unbiased = var
                .iter()
                .map(|v| if count > 1.0 { v * count / (count - 1.0) } else { *v })
                .collect();
            let stats = BatchStats { mean: mean.clone(), var_unbiased: unbiased };
            (mean, var, Some(stats))
        }
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (m, is, g, b) = (mean[ci], inv_std[ci], gamma.data()[ci], beta.data()[ci]);
            for i in base..base + plane {
                let xh = (x.data()[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }

    let training = running.is_none();
    let (gc, bc, xc) = (gamma.clone(), beta.clone(), x.clone());
    let y = Tensor::from_op(out, x.shape().to_vec(), &[x, gamma, beta], move |gy, _| {
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in base..base + plane {
                    dgamma[ci] += gy[i] * xhat[i];
                    dbeta[ci] += gy[i];
                }
            }
        }
        let dx = xc.requires_grad().then(|| {
            let mut dx = vec![0.0; gy.len()];
            for ci in 0..c {
                let g = gc.data()[ci];
                let is = inv_std[ci];
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for i in base..base + plane {
                        dx[i] = if training {
                            // d/dx of g * (x - mean(x)) / std(x)
                            g * is * (gy[i] - dbeta[ci] / count - xhat[i] * dgamma[ci] / count)
                        } else {
                            g * is * gy[i]
                        };
                    }
                }
            }
            dx
        });
        vec![
            dx,
            gc.requires_grad().then_some(dgamma),
            bc.requires_grad().then_some(dbeta),
        ]
    });
    Ok((y, stats))
}
