//! Per-channel batch normalization over `N, H, W`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-3;
/// Weight of the previous running value: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Values saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
    gamma: Vec<f32>,
}

impl BatchNormCache {
    pub fn normalized(&self) -> &Tensor {
        &self.normalized
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Returns the normalized output and, in train mode, the cache for
/// [`batchnorm_backward`]. Train mode also folds the batch statistics into
/// `stats`.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let [n, c, h, w] = input.dims4("batchnorm input")?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &stats.mean),
        ("running var", &stats.var),
    ] {
        if t.shape() != [c] {
            return Err(Error::invalid(format!(
                "batchnorm: {name} shape {:?} does not match {c} channels",
                t.shape()
            )));
        }
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();

    let (mean, inv_std) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::invalid(
                    "batchnorm: train mode needs at least two elements per channel",
                ));
            }
            let mut means = vec![0.0f32; c];
            let mut vars = vec![0.0f32; c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sum += x[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mu = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sq += x[off..off + plane]
                        .iter()
                        .map(|&v| (v as f64 - mu).powi(2))
                        .sum::<f64>();
                }
                means[ch] = mu as f32;
                vars[ch] = (sq / count as f64) as f32;
            }
            let rm = stats.mean.data_mut();
            for ch in 0..c {
                rm[ch] = BN_MOMENTUM * rm[ch] + (1.0 - BN_MOMENTUM) * means[ch];
            }
            let rv = stats.var.data_mut();
            for ch in 0..c {
                rv[ch] = BN_MOMENTUM * rv[ch] + (1.0 - BN_MOMENTUM) * vars[ch];
            }
            let inv = vars.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            (means, inv)
        }
        Mode::Infer => (
            stats.mean.data().to_vec(),
            stats
                .var
                .data()
                .iter()
                .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
                .collect::<Vec<_>>(),
        ),
    };

    let mut normalized = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let (g, bt) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    let out = Tensor::from_vec(input.shape(), out)?;
    let cache = match mode {
        Mode::Train => Some(BatchNormCache {
            normalized: Tensor::from_vec(input.shape(), normalized)?,
            inv_std,
            gamma: g.to_vec(),
        }),
        Mode::Infer => None,
    };
    Ok((out, cache))
}

/// Exact gradient of a train-mode forward, including the dependence of the
/// batch mean and variance on the input.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: Option<&BatchNormCache>,
) -> Result<BatchNormGrads> {
    let cache =
        cache.ok_or_else(|| Error::state("batchnorm backward without a train-mode cache"))?;
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::state(format!(
            "batchnorm backward: gradient shape {:?} does not match cached {:?}",
            grad_out.shape(),
            cache.normalized.shape()
        )));
    }
    let [n, c, h, w] = grad_out.dims4("batchnorm gradient")?;
    let plane = h * w;
    let m = (n * plane) as f32;
    let dy = grad_out.data();
    let xh = cache.normalized.data();

    let mut sum_dy = vec![0.0f32; c];
    let mut sum_dy_xh = vec![0.0f32; c];
    for ch in 0..c {
        let (mut s, mut sx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                s += dy[i] as f64;
                sx += (dy[i] * xh[i]) as f64;
            }
        }
        sum_dy[ch] = s as f32;
        sum_dy_xh[ch] = sx as f32;
    }

    let mut dx = vec![0.0f32; dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let scale = cache.gamma[ch] * cache.inv_std[ch] / m;
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = scale * (m * dy[i] - sum_dy[ch] - xh[i] * sum_dy_xh[ch]);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_vec(grad_out.shape(), dx)?,
        gamma: Tensor::from_vec(&[c], sum_dy_xh)?,
        beta: Tensor::from_vec(&[c], sum_dy)?,
    })
}
