//! Batch normalization over the batch and spatial axes of `[N, C, H, W]`
//! tensors, one (gamma, beta) pair per channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward context retained for the backward pass, plus the batch statistics
/// needed to update running averages.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

fn check_affine(c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "gamma/beta must have extent [{c}], got {:?} and {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Training-mode forward: per-channel standardization over batch and spatial
/// axes, then the affine map `gamma * x_hat + beta`. The batch must hold at
/// least 2 samples.
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, h, w) = x.as_nchw()?;
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "batch norm expects [N, C, H, W], got {:?}",
            x.shape()
        )));
    }
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    check_affine(c, gamma, beta)?;

    let m = (n * h * w) as f64;
    let xd = x.data();
    let hw = h * w;

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            let base = (b * c + ci) * hw;
            for k in 0..hw {
                s += xd[base + k];
            }
        }
        mean[ci] = s / m;
        let mut v = 0.0;
        for b in 0..n {
            let base = (b * c + ci) * hw;
            for k in 0..hw {
                let d = xd[base + k] - mean[ci];
                v += d * d;
            }
        }
        var[ci] = v / m;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * hw;
            let (mu, is) = (mean[ci], inv_std[ci]);
            let (g, be) = (gamma.data()[ci], beta.data()[ci]);
            for k in 0..hw {
                let xh = (xd[base + k] - mu) * is;
                x_hat[base + k] = xh;
                out[base + k] = g * xh + be;
            }
        }
    }

    Ok((
        Tensor::from_data(x.shape(), out)?,
        BatchNormCache {
            x_hat: Tensor::from_data(x.shape(), x_hat)?,
            inv_std,
            gamma: gamma.data().to_vec(),
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Backward through the standardization and affine map.
///
/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm_backward: {:?} vs {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.as_nchw()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let gd = grad_out.data();
    let xh = cache.x_hat.data();

    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ci in 0..c {
        for b in 0..n {
            let base = (b * c + ci) * hw;
            for k in 0..hw {
                grad_beta[ci] += gd[base + k];
                grad_gamma[ci] += gd[base + k] * xh[base + k];
            }
        }
    }

    let mut grad_x = vec![0.0; gd.len()];
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * hw;
            let scale = cache.gamma[ci] * cache.inv_std[ci];
            for k in 0..hw {
                grad_x[base + k] = scale
                    * (gd[base + k]
                        - grad_beta[ci] / m
                        - xh[base + k] * grad_gamma[ci] / m);
            }
        }
    }

    Ok((
        Tensor::from_data(grad_out.shape(), grad_x)?,
        Tensor::from_data(&[c], grad_gamma)?,
        Tensor::from_data(&[c], grad_beta)?,
    ))
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = x.as_nchw()?;
    check_affine(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::ShapeMismatch(
            "running statistics extent must equal channel count".into(),
        ));
    }
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * hw;
            let is = 1.0 / (running_var[ci] + eps).sqrt();
            let (g, be) = (gamma.data()[ci], beta.data()[ci]);
            for k in 0..hw {
                out[base + k] = g * (xd[base + k] - running_mean[ci]) * is + be;
            }
        }
    }
    Tensor::from_data(x.shape(), out)
}
