use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{EnsembleDenoiser, Refinement};
use super::layers::{for_each_param, join, Feature, Module, ParamKind, Visitor};
use super::spec::NetworkSpec;
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::kspace::Constraint;
use crate::tensor::BatchNormMode;

/// One denoiser stage. Stages after the first may carry the inter-block
/// refinement that mixes every earlier output into the stage input.
#[derive(Clone, Debug)]
pub struct Stage {
    pub dense_ref: Option<Refinement>,
    pub denoiser: EnsembleDenoiser,
}

/// Cascade of ensemble denoisers with hard data consistency after each.
#[derive(Clone, Debug)]
pub struct CascadeModel {
    spec: NetworkSpec,
    pub stages: Vec<Stage>,
}

/// Final reconstruction plus per-stage diagnostics.
#[derive(Clone, Debug)]
pub struct CascadeOutput {
    pub output: ComplexTensor,
    /// Post-DC output of each stage; the last one is `output`.
    pub stage_outputs: Vec<ComplexTensor>,
    /// Per-branch intermediate images of the first stage.
    pub first_stage_branches: Vec<ComplexTensor>,
}

impl CascadeModel {
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let io = spec.image_channels();
        let stages = (0..spec.cascade_depth)
            .map(|s| {
                // Inputs to the s-th refinement: x_u and the s earlier outputs.
                let dense_ref = (s > 0 && spec.inter_block_dense).then(|| {
                    Refinement::new(io * (s + 1), spec.refinement_filters, io, spec.mode, &mut rng)
                });
                Stage {
                    dense_ref,
                    denoiser: EnsembleDenoiser::new(spec, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Reconstructs from the zero-filled image `x_u` (`N × 1 × H × W`), with
    /// `constraint` holding the measured samples for the same batch.
    ///
    /// Stage `s` denoises `z_s` to `y_s = DC(z_s + D_s(z_s))`, where
    /// `z_1 = x_u` and, with inter-block dense connections,
    /// `z_s = y_{s−1} + Ref_s([x_u, y_1, …, y_{s−1}])`.
    pub fn forward(
        &mut self,
        x_u: &ComplexTensor,
        constraint: &Constraint,
        mode: BatchNormMode,
    ) -> Result<CascadeOutput> {
        if x_u.shape().len() != 4 || x_u.shape()[1] != 1 {
            return Err(Error::shape(
                "CascadeModel::forward",
                format!("expected N×1×H×W complex images, got {:?}", x_u.shape()),
            ));
        }
        let (net_mode, io) = (self.spec.mode, self.spec.image_channels());
        let encode = |x: &ComplexTensor| Feature::from_image(x, net_mode, io);
        let mut history = vec![encode(x_u)?];
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        let mut first_stage_branches = Vec::new();
        for (s, stage) in self.stages.iter_mut().enumerate() {
            let previous = history.last().expect("never empty");
            let z = match &mut stage.dense_ref {
                Some(r) => {
                    let mixed = r.forward(&Feature::concat(&history.iter().collect::<Vec<_>>())?, mode)?;
                    previous.add(&mixed)?
                }
                None => previous.clone(),
            };
            let d = stage.denoiser.forward(&z, mode)?;
            if s == 0 {
                first_stage_branches = d
                    .intermediates
                    .iter()
                    .map(Feature::to_image)
                    .collect::<Result<_>>()?;
            }
            let y = constraint.apply(&z.add(&d.output)?.to_image()?)?;
            history.push(encode(&y)?);
            stage_outputs.push(y);
        }
        Ok(CascadeOutput {
            output: stage_outputs.last().expect("depth >= 1").clone(),
            stage_outputs,
            first_stage_branches,
        })
    }
}

impl Module for CascadeModel {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            if let Some(r) = &mut s.dense_ref {
                r.accept(&join(&p, "dense_ref"), v);
            }
            s.denoiser.accept(&join(&p, "denoiser"), v);
        }
    }
}

/// Scalar parameter totals, split by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct ParameterCount {
    pub conv_weights: usize,
    pub conv_biases: usize,
    pub norm: usize,
    pub total: usize,
}

impl ParameterCount {
    /// Convolution weights and biases together.
    pub fn filters(&self) -> usize {
        self.conv_weights + self.conv_biases
    }
}

/// Counts every learnable scalar; real and imaginary parts of complex
/// weights count separately.
pub fn count_parameters<M: Module + Clone>(model: &M) -> usize {
    parameter_breakdown(model).total
}

pub fn parameter_breakdown<M: Module + Clone>(model: &M) -> ParameterCount {
    let mut copy = model.clone();
    let mut c = ParameterCount::default();
    for_each_param(&mut copy, |_, kind, t| {
        let n = t.numel();
        match kind {
            ParamKind::ConvWeight => c.conv_weights += n,
            ParamKind::ConvBias => c.conv_biases += n,
            ParamKind::Norm => c.norm += n,
        }
        c.total += n;
    });
    c
}
