use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// 2-D batch normalization over the `N, H, W` axes of each channel.
///
/// In train mode the batch statistics normalize the input and are blended
/// into `running` with weight `momentum` (the variance blended in is the
/// unbiased estimate). Eval mode normalizes with `running` instead.
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    mode: BatchNormMode,
    eps: f64,
    momentum: f64,
) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("batchnorm2d")?;
    if n == 0 {
        return Err(Error::invalid("batchnorm2d", "empty batch"));
    }
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("{name} {:?} does not match {c} channels", t.shape()),
            ));
        }
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::shape("batchnorm2d", "running statistics channel count"));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == BatchNormMode::Train && count < 2 {
        return Err(Error::invalid(
            "batchnorm2d",
            "train mode needs at least two values per channel",
        ));
    }
    let x = input.data();

    let (mean, var) = match mode {
        BatchNormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    s += x[base..base + plane].iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    ss += x[base..base + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = ss / count as f64;
            }
            let unbias = count as f64 / (count - 1) as f64;
            for ch in 0..c {
                running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mean[ch];
                running.var[ch] =
                    (1.0 - momentum) * running.var[ch] + momentum * var[ch] * unbias;
            }
            (mean, var)
        }
        BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in base..base + plane {
                xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                out[i] = g * xhat[i] + bt;
            }
        }
    }

    let gamma_c = gamma.clone();
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        out,
        "batchnorm2d",
        &[input, gamma, beta],
        move |g, needs| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    for i in base..base + plane {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                let m = count as f64;
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let gm = gamma_c.data()[ch];
                        let k = gm * inv_std[ch];
                        for i in base..base + plane {
                            gx[i] = match mode {
                                BatchNormMode::Train => {
                                    k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                }
                                BatchNormMode::Eval => k * g[i],
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
        },
    ))
}
