use rand::Rng;

use super::spec::Mode;
use crate::complex::{
    complex_batchnorm, complex_conv2d, complex_conv2d_transpose, crelu, ComplexBNState,
    ComplexKernel, ComplexTensor,
};
use crate::error::{Error, Result};
use crate::tensor::{
    self, batchnorm2d, conv2d, conv2d_transpose, BatchNormMode, ConvParams, RunningStats, Tensor,
    BN_EPS, BN_MOMENTUM,
};

/// What a learnable tensor belongs to, for parameter breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    Norm,
}

/// Walks every learnable tensor and every non-learnable state buffer of a
/// module in a fixed order.
pub trait Visitor {
    fn param(&mut self, name: &str, kind: ParamKind, t: &mut Tensor);
    fn buffer(&mut self, _name: &str, _values: &mut Vec<f64>) {}
}

pub trait Module {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

struct ParamFn<F>(F);

impl<F: FnMut(&str, ParamKind, &mut Tensor)> Visitor for ParamFn<F> {
    fn param(&mut self, name: &str, kind: ParamKind, t: &mut Tensor) {
        (self.0)(name, kind, t)
    }
}

/// Calls `f` on every learnable tensor of `m`.
pub fn for_each_param<M: Module + ?Sized>(m: &mut M, f: impl FnMut(&str, ParamKind, &mut Tensor)) {
    m.accept("", &mut ParamFn(f));
}

/// Activations flowing through a network in either mode.
#[derive(Clone, Debug)]
pub enum Feature {
    Real(Tensor),
    Complex(ComplexTensor),
}

impl Feature {
    /// Encodes a `N × 1 × H × W` complex image for a network with the given
    /// mode and image channel count.
    pub fn from_image(x: &ComplexTensor, mode: Mode, image_channels: usize) -> Result<Self> {
        match (mode, image_channels) {
            (Mode::Complex, 1) => Ok(Feature::Complex(x.clone())),
            (Mode::Real, 2) => Ok(Feature::Real(x.to_channels()?)),
            (Mode::Real, 1) => Ok(Feature::Real(x.re.clone())),
            _ => Err(Error::invalid(
                "Feature::from_image",
                format!("{image_channels} image channels in {mode:?} mode"),
            )),
        }
    }

    /// Inverse of [`Feature::from_image`].
    pub fn to_image(&self) -> Result<ComplexTensor> {
        match self {
            Feature::Complex(x) => Ok(x.clone()),
            Feature::Real(t) if t.shape().get(1) == Some(&1) => Ok(ComplexTensor::from_real(t.clone())),
            Feature::Real(t) => ComplexTensor::from_channels(t),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Feature::Real(t) => t.shape(),
            Feature::Complex(c) => c.shape(),
        }
    }

    pub fn channels(&self) -> usize {
        self.shape()[1]
    }

    pub fn add(&self, other: &Feature) -> Result<Feature> {
        match (self, other) {
            (Feature::Real(a), Feature::Real(b)) => Ok(Feature::Real(tensor::add(a, b)?)),
            (Feature::Complex(a), Feature::Complex(b)) => Ok(Feature::Complex(a.add(b)?)),
            _ => Err(mixed("Feature::add")),
        }
    }

    pub fn concat(parts: &[&Feature]) -> Result<Feature> {
        if let [only] = parts {
            return Ok((*only).clone());
        }
        match parts.first() {
            Some(Feature::Real(_)) => {
                let ts = parts
                    .iter()
                    .map(|p| match p {
                        Feature::Real(t) => Ok(t),
                        _ => Err(mixed("Feature::concat")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Feature::Real(tensor::concat_channels(&ts)?))
            }
            Some(Feature::Complex(_)) => {
                let cs = parts
                    .iter()
                    .map(|p| match p {
                        Feature::Complex(c) => Ok(c),
                        _ => Err(mixed("Feature::concat")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Feature::Complex(ComplexTensor::concat_channels(&cs)?))
            }
            None => Err(Error::invalid("Feature::concat", "nothing to concatenate")),
        }
    }

    /// ReLU, or CReLU in complex mode.
    pub fn relu(&self) -> Feature {
        match self {
            Feature::Real(t) => Feature::Real(tensor::relu(t)),
            Feature::Complex(c) => Feature::Complex(crelu(c)),
        }
    }
}

fn mixed(op: &'static str) -> Error {
    Error::invalid(op, "real and complex features cannot be mixed")
}

#[derive(Clone, Debug)]
enum ConvWeights {
    Real { weight: Tensor, bias: Tensor },
    Complex(ComplexKernel),
}

/// A stride-1 same-padded convolution, or its transpose.
#[derive(Clone, Debug)]
pub struct Conv {
    weights: ConvWeights,
    params: ConvParams,
    transpose: bool,
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        mode: Mode,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        transpose: bool,
        rng: &mut R,
    ) -> Self {
        let k = kernel_size;
        // Transposed weights are stored as the conv they adjoin: [in, out, k, k].
        let shape = if transpose {
            [in_channels, out_channels, k, k]
        } else {
            [out_channels, in_channels, k, k]
        };
        let fan_in = in_channels * k * k;
        let weights = match mode {
            Mode::Real => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                ConvWeights::Real {
                    weight: Tensor::uniform(&shape, -bound, bound, rng).requires_grad(true),
                    bias: Tensor::uniform(&[out_channels], -bound, bound, rng).requires_grad(true),
                }
            }
            Mode::Complex => ConvWeights::Complex(ComplexKernel::init(shape, out_channels, fan_in, rng)),
        };
        Self {
            weights,
            params: ConvParams::same(k, dilation),
            transpose,
            in_channels,
            out_channels,
            kernel_size: k,
        }
    }

    pub fn mode(&self) -> Mode {
        match self.weights {
            ConvWeights::Real { .. } => Mode::Real,
            ConvWeights::Complex(_) => Mode::Complex,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn dilation(&self) -> usize {
        self.params.dilation
    }

    pub fn forward(&self, x: &Feature) -> Result<Feature> {
        match (&self.weights, x) {
            (ConvWeights::Real { weight, bias }, Feature::Real(t)) => {
                let y = if self.transpose {
                    conv2d_transpose(t, weight, Some(bias), self.params)?
                } else {
                    conv2d(t, weight, Some(bias), self.params)?
                };
                Ok(Feature::Real(y))
            }
            (ConvWeights::Complex(kernel), Feature::Complex(c)) => {
                let y = if self.transpose {
                    complex_conv2d_transpose(c, kernel, self.params)?
                } else {
                    complex_conv2d(c, kernel, self.params)?
                };
                Ok(Feature::Complex(y))
            }
            _ => Err(mixed("Conv::forward")),
        }
    }
}

impl Module for Conv {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        match &mut self.weights {
            ConvWeights::Real { weight, bias } => {
                v.param(&join(prefix, "weight"), ParamKind::ConvWeight, weight);
                v.param(&join(prefix, "bias"), ParamKind::ConvBias, bias);
            }
            ConvWeights::Complex(k) => {
                v.param(&join(prefix, "wr"), ParamKind::ConvWeight, &mut k.wr);
                v.param(&join(prefix, "wi"), ParamKind::ConvWeight, &mut k.wi);
                v.param(&join(prefix, "bias_re"), ParamKind::ConvBias, &mut k.bias_re);
                v.param(&join(prefix, "bias_im"), ParamKind::ConvBias, &mut k.bias_im);
            }
        }
    }
}

/// Batch norm, or whitening complex batch norm in complex mode.
#[derive(Clone, Debug)]
pub enum Norm {
    Real {
        gamma: Tensor,
        beta: Tensor,
        running: RunningStats,
    },
    Complex(ComplexBNState),
}

impl Norm {
    pub fn new(mode: Mode, channels: usize) -> Self {
        match mode {
            Mode::Real => Norm::Real {
                gamma: Tensor::ones(&[channels]).requires_grad(true),
                beta: Tensor::zeros(&[channels]).requires_grad(true),
                running: RunningStats::new(channels),
            },
            Mode::Complex => Norm::Complex(ComplexBNState::new(channels)),
        }
    }

    pub fn forward(&mut self, x: &Feature, mode: BatchNormMode) -> Result<Feature> {
        match (self, x) {
            (Norm::Real { gamma, beta, running }, Feature::Real(t)) => Ok(Feature::Real(batchnorm2d(
                t,
                gamma,
                beta,
                running,
                mode,
                BN_EPS,
                BN_MOMENTUM,
            )?)),
            (Norm::Complex(state), Feature::Complex(c)) => {
                Ok(Feature::Complex(complex_batchnorm(c, state, mode)?))
            }
            _ => Err(mixed("Norm::forward")),
        }
    }
}

impl Module for Norm {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        match self {
            Norm::Real { gamma, beta, running } => {
                v.param(&join(prefix, "gamma"), ParamKind::Norm, gamma);
                v.param(&join(prefix, "beta"), ParamKind::Norm, beta);
                v.buffer(&join(prefix, "running_mean"), &mut running.mean);
                v.buffer(&join(prefix, "running_var"), &mut running.var);
            }
            Norm::Complex(s) => {
                v.param(&join(prefix, "gamma_rr"), ParamKind::Norm, &mut s.gamma_rr);
                v.param(&join(prefix, "gamma_ii"), ParamKind::Norm, &mut s.gamma_ii);
                v.param(&join(prefix, "gamma_ri"), ParamKind::Norm, &mut s.gamma_ri);
                v.param(&join(prefix, "beta_re"), ParamKind::Norm, &mut s.beta_re);
                v.param(&join(prefix, "beta_im"), ParamKind::Norm, &mut s.beta_im);
                v.buffer(&join(prefix, "running_mean_re"), &mut s.running_mean_re);
                v.buffer(&join(prefix, "running_mean_im"), &mut s.running_mean_im);
                v.buffer(&join(prefix, "running_v_rr"), &mut s.running_v_rr);
                v.buffer(&join(prefix, "running_v_ii"), &mut s.running_v_ii);
                v.buffer(&join(prefix, "running_v_ri"), &mut s.running_v_ri);
            }
        }
    }
}

/// Conv → norm → (C)ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvUnit {
    pub fn new<R: Rng + ?Sized>(
        mode: Mode,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv::new(mode, in_channels, out_channels, kernel_size, dilation, false, rng),
            norm: Norm::new(mode, out_channels),
        }
    }

    pub fn forward(&mut self, x: &Feature, mode: BatchNormMode) -> Result<Feature> {
        let y = self.conv.forward(x)?;
        Ok(self.norm.forward(&y, mode)?.relu())
    }
}

impl Module for ConvUnit {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv.accept(&join(prefix, "conv"), v);
        self.norm.accept(&join(prefix, "norm"), v);
    }
}
