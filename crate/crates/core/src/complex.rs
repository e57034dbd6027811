//! Complex-valued layers built from pairs of real tensors.
//!
//! Every complex operation here is a composition of differentiable real
//! operations, so gradients w.r.t. real and imaginary parts come from the
//! same tape as the rest of the network.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    self, add, add_channel, add_scalar, channel_mean, conv2d, conv2d_transpose, mul, mul_channel,
    neg, recip, relu, sqrt, sub, BatchNormMode, ConvParams, Tensor, BN_EPS, BN_MOMENTUM,
};

/// A complex array stored as equal-shape real and imaginary parts.
#[derive(Clone, Debug)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape(
                "ComplexTensor::new",
                format!("re {:?} vs im {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    /// A purely real array.
    pub fn from_real(re: Tensor) -> Self {
        let im = Tensor::zeros(re.shape());
        Self { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn numel(&self) -> usize {
        self.re.numel()
    }

    /// Elementwise modulus `√(re² + im²)`.
    pub fn magnitude(&self) -> Vec<f64> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    /// Elementwise phase in `(−π, π]`.
    pub fn phase(&self) -> Vec<f64> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(r, i)| i.atan2(*r))
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    pub fn detach(&self) -> Self {
        Self {
            re: self.re.detach(),
            im: self.im.detach(),
        }
    }

    pub fn requires_grad(&self, flag: bool) -> Self {
        Self {
            re: self.re.requires_grad(flag),
            im: self.im.requires_grad(flag),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            re: add(&self.re, &other.re)?,
            im: add(&self.im, &other.im)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            re: sub(&self.re, &other.re)?,
            im: sub(&self.im, &other.im)?,
        })
    }

    /// Multiplies both parts by a real scalar.
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            re: tensor::scale(&self.re, factor),
            im: tensor::scale(&self.im, factor),
        }
    }

    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let re: Vec<&Tensor> = parts.iter().map(|p| &p.re).collect();
        let im: Vec<&Tensor> = parts.iter().map(|p| &p.im).collect();
        Ok(Self {
            re: tensor::concat_channels(&re)?,
            im: tensor::concat_channels(&im)?,
        })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            re: tensor::slice_channels(&self.re, start, len)?,
            im: tensor::slice_channels(&self.im, start, len)?,
        })
    }

    /// Concatenates along the batch axis. Detached: used for assembling
    /// inputs, not inside a network.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("ComplexTensor::concat_batch", "nothing to concatenate"))?;
        let inner = &first.shape()[1..];
        let mut re = Vec::new();
        let mut im = Vec::new();
        for p in parts {
            if &p.shape()[1..] != inner {
                return Err(Error::shape(
                    "ComplexTensor::concat_batch",
                    format!("{:?} vs {:?}", p.shape(), first.shape()),
                ));
            }
            re.extend_from_slice(p.re.data());
            im.extend_from_slice(p.im.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
        Ok(Self {
            re: Tensor::new(&shape, re)?,
            im: Tensor::new(&shape, im)?,
        })
    }

    /// Stacks the parts as two real channels: `N×1×H×W → N×2×H×W`.
    pub fn to_channels(&self) -> Result<Tensor> {
        tensor::concat_channels(&[&self.re, &self.im])
    }

    /// Inverse of [`ComplexTensor::to_channels`].
    pub fn from_channels(t: &Tensor) -> Result<Self> {
        let [_, c, _, _] = t.dims4("ComplexTensor::from_channels")?;
        if c % 2 != 0 {
            return Err(Error::shape(
                "ComplexTensor::from_channels",
                format!("need an even channel count, got {c}"),
            ));
        }
        Ok(Self {
            re: tensor::slice_channels(t, 0, c / 2)?,
            im: tensor::slice_channels(t, c / 2, c / 2)?,
        })
    }
}

/// Complex filter bank `W = W_R + i·W_I` with complex bias.
#[derive(Clone, Debug)]
pub struct ComplexKernel {
    pub wr: Tensor,
    pub wi: Tensor,
    pub bias_re: Tensor,
    pub bias_im: Tensor,
}

impl ComplexKernel {
    pub fn new(wr: Tensor, wi: Tensor, bias_re: Tensor, bias_im: Tensor) -> Result<Self> {
        if wr.shape() != wi.shape() {
            return Err(Error::shape(
                "ComplexKernel::new",
                format!("wr {:?} vs wi {:?}", wr.shape(), wi.shape()),
            ));
        }
        if bias_re.shape() != bias_im.shape() {
            return Err(Error::shape("ComplexKernel::new", "bias parts differ"));
        }
        Ok(Self {
            wr,
            wi,
            bias_re,
            bias_im,
        })
    }

    /// Independent fan-in scaled uniform initialization of both parts.
    /// `weight_shape` is `[a, b, k, k]` with fan-in `b·k·k`.
    pub fn init<R: Rng + ?Sized>(
        weight_shape: [usize; 4],
        bias_len: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt() / std::f64::consts::SQRT_2;
        let param = |t: Tensor| t.requires_grad(true);
        Self {
            wr: param(Tensor::uniform(&weight_shape, -bound, bound, rng)),
            wi: param(Tensor::uniform(&weight_shape, -bound, bound, rng)),
            bias_re: param(Tensor::uniform(&[bias_len], -bound, bound, rng)),
            bias_im: param(Tensor::uniform(&[bias_len], -bound, bound, rng)),
        }
    }
}

/// Complex convolution as four real convolutions:
/// `(Wr∗a − Wi∗b) + i(Wi∗a + Wr∗b)` for input `a + ib`.
pub fn complex_conv2d(input: &ComplexTensor, kernel: &ComplexKernel, p: ConvParams) -> Result<ComplexTensor> {
    let rr = conv2d(&input.re, &kernel.wr, Some(&kernel.bias_re), p)?;
    let ii = conv2d(&input.im, &kernel.wi, None, p)?;
    let ri = conv2d(&input.re, &kernel.wi, Some(&kernel.bias_im), p)?;
    let ir = conv2d(&input.im, &kernel.wr, None, p)?;
    ComplexTensor::new(sub(&rr, &ii)?, add(&ri, &ir)?)
}

/// Transposed complex convolution, decomposed the same way.
pub fn complex_conv2d_transpose(
    input: &ComplexTensor,
    kernel: &ComplexKernel,
    p: ConvParams,
) -> Result<ComplexTensor> {
    let rr = conv2d_transpose(&input.re, &kernel.wr, Some(&kernel.bias_re), p)?;
    let ii = conv2d_transpose(&input.im, &kernel.wi, None, p)?;
    let ri = conv2d_transpose(&input.re, &kernel.wi, Some(&kernel.bias_im), p)?;
    let ir = conv2d_transpose(&input.im, &kernel.wr, None, p)?;
    ComplexTensor::new(sub(&rr, &ii)?, add(&ri, &ir)?)
}

/// ReLU applied separately to the real and imaginary parts.
pub fn crelu(input: &ComplexTensor) -> ComplexTensor {
    ComplexTensor {
        re: relu(&input.re),
        im: relu(&input.im),
    }
}

/// Running statistics and learnable affine of a complex batch norm.
///
/// The 2×2 covariance of `(re, im)` is kept as `(v_rr, v_ii, v_ri)` per
/// channel; the learnable scale `Γ` is symmetric with entries
/// `(gamma_rr, gamma_ii, gamma_ri)`.
#[derive(Clone, Debug)]
pub struct ComplexBNState {
    pub running_mean_re: Vec<f64>,
    pub running_mean_im: Vec<f64>,
    pub running_v_rr: Vec<f64>,
    pub running_v_ii: Vec<f64>,
    pub running_v_ri: Vec<f64>,
    pub gamma_rr: Tensor,
    pub gamma_ii: Tensor,
    pub gamma_ri: Tensor,
    pub beta_re: Tensor,
    pub beta_im: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl ComplexBNState {
    /// `Γ = I/√2`, `β = 0`, running mean 0 and running covariance `I`.
    pub fn new(channels: usize) -> Self {
        let g = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            running_mean_re: vec![0.0; channels],
            running_mean_im: vec![0.0; channels],
            running_v_rr: vec![1.0; channels],
            running_v_ii: vec![1.0; channels],
            running_v_ri: vec![0.0; channels],
            gamma_rr: Tensor::full(&[channels], g).requires_grad(true),
            gamma_ii: Tensor::full(&[channels], g).requires_grad(true),
            gamma_ri: Tensor::zeros(&[channels]).requires_grad(true),
            beta_re: Tensor::zeros(&[channels]).requires_grad(true),
            beta_im: Tensor::zeros(&[channels]).requires_grad(true),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean_re.len()
    }

    /// Sets `Γ = I` and `β = 0`.
    pub fn with_identity_affine(mut self) -> Self {
        let c = self.channels();
        self.gamma_rr = Tensor::ones(&[c]).requires_grad(true);
        self.gamma_ii = Tensor::ones(&[c]).requires_grad(true);
        self.gamma_ri = Tensor::zeros(&[c]).requires_grad(true);
        self
    }
}

/// Closed-form inverse principal square root of `[[a, b], [b, c]]`:
/// with `s = √(ac − b²)` and `t = √(a + c + 2s)` it is
/// `[[c + s, −b], [−b, a + s]] / (s·t)`. Returns `(w_rr, w_ii, w_ri)`.
pub fn inverse_sqrt_2x2(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let s = (a * c - b * b).sqrt();
    let t = (a + c + 2.0 * s).sqrt();
    let k = 1.0 / (s * t);
    ((c + s) * k, (a + s) * k, -b * k)
}

/// Same as [`inverse_sqrt_2x2`] on per-channel tensors, differentiably.
fn inverse_sqrt_2x2_tensors(a: &Tensor, b: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let det = sub(&mul(a, c)?, &mul(b, b)?)?;
    let s = sqrt(&det)?;
    let t = sqrt(&add(&add(a, c)?, &tensor::scale(&s, 2.0))?)?;
    let k = recip(&mul(&s, &t)?)?;
    let w_rr = mul(&add(c, &s)?, &k)?;
    let w_ii = mul(&add(a, &s)?, &k)?;
    let w_ri = mul(&neg(b), &k)?;
    Ok((w_rr, w_ii, w_ri))
}

/// Complex batch normalization by whitening.
///
/// Each channel is centred, multiplied by the inverse square root of its
/// `(re, im)` covariance `V + eps·I`, then scaled by `Γ` and shifted by `β`.
/// Train mode uses batch statistics and blends them into the running state.
pub fn complex_batchnorm(
    input: &ComplexTensor,
    state: &mut ComplexBNState,
    mode: BatchNormMode,
) -> Result<ComplexTensor> {
    let [n, c, h, w] = input.re.dims4("complex_batchnorm")?;
    if c != state.channels() {
        return Err(Error::shape(
            "complex_batchnorm",
            format!("input has {c} channels, state has {}", state.channels()),
        ));
    }
    if mode == BatchNormMode::Train && n * h * w < 2 {
        return Err(Error::invalid(
            "complex_batchnorm",
            "train mode needs at least two values per channel",
        ));
    }
    let eps = state.eps;
    let (centred_re, centred_im, w_rr, w_ii, w_ri) = match mode {
        BatchNormMode::Train => {
            let mu_re = channel_mean(&input.re)?;
            let mu_im = channel_mean(&input.im)?;
            let cr = add_channel(&input.re, &neg(&mu_re))?;
            let ci = add_channel(&input.im, &neg(&mu_im))?;
            let v_rr = channel_mean(&mul(&cr, &cr)?)?;
            let v_ii = channel_mean(&mul(&ci, &ci)?)?;
            let v_ri = channel_mean(&mul(&cr, &ci)?)?;
            let m = state.momentum;
            let blend = |run: &mut Vec<f64>, batch: &Tensor| {
                run.iter_mut()
                    .zip(batch.data())
                    .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
            };
            blend(&mut state.running_mean_re, &mu_re);
            blend(&mut state.running_mean_im, &mu_im);
            blend(&mut state.running_v_rr, &v_rr);
            blend(&mut state.running_v_ii, &v_ii);
            blend(&mut state.running_v_ri, &v_ri);
            let (w_rr, w_ii, w_ri) =
                inverse_sqrt_2x2_tensors(&add_scalar(&v_rr, eps), &v_ri, &add_scalar(&v_ii, eps))?;
            (cr, ci, w_rr, w_ii, w_ri)
        }
        BatchNormMode::Eval => {
            let negated = |v: &[f64]| Tensor::new(&[c], v.iter().map(|x| -x).collect());
            let cr = add_channel(&input.re, &negated(&state.running_mean_re)?)?;
            let ci = add_channel(&input.im, &negated(&state.running_mean_im)?)?;
            let mut w = [vec![0.0; c], vec![0.0; c], vec![0.0; c]];
            for ch in 0..c {
                let (a, b, d) = inverse_sqrt_2x2(
                    state.running_v_rr[ch] + eps,
                    state.running_v_ri[ch],
                    state.running_v_ii[ch] + eps,
                );
                w[0][ch] = a;
                w[1][ch] = b;
                w[2][ch] = d;
            }
            let [a, b, d] = w;
            (
                cr,
                ci,
                Tensor::new(&[c], a)?,
                Tensor::new(&[c], b)?,
                Tensor::new(&[c], d)?,
            )
        }
    };
    let xr = add(&mul_channel(&centred_re, &w_rr)?, &mul_channel(&centred_im, &w_ri)?)?;
    let xi = add(&mul_channel(&centred_re, &w_ri)?, &mul_channel(&centred_im, &w_ii)?)?;
    let out_re = add_channel(
        &add(&mul_channel(&xr, &state.gamma_rr)?, &mul_channel(&xi, &state.gamma_ri)?)?,
        &state.beta_re,
    )?;
    let out_im = add_channel(
        &add(&mul_channel(&xr, &state.gamma_ri)?, &mul_channel(&xi, &state.gamma_ii)?)?,
        &state.beta_im,
    )?;
    ComplexTensor::new(out_re, out_im)
}
