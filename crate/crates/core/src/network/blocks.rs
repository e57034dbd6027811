use rand::Rng;

use super::layers::{join, Conv, ConvUnit, Feature, Module, Visitor};
use super::spec::{BranchSpec, Mode, NetworkSpec};
use crate::error::Result;
use crate::tensor::BatchNormMode;

/// Dilated Dense Block: every layer sees the block input concatenated with
/// all earlier layer outputs, and a 1×1 head reduces the full stack to one
/// image.
#[derive(Clone, Debug)]
pub struct DilatedDenseBlock {
    pub layers: Vec<ConvUnit>,
    pub head: Conv,
}

impl DilatedDenseBlock {
    pub fn new<R: Rng + ?Sized>(
        spec: &BranchSpec,
        in_channels: usize,
        growth_filters: usize,
        out_channels: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Self {
        let mut channels = in_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let filters = l.filters.unwrap_or(growth_filters);
            layers.push(ConvUnit::new(mode, channels, filters, l.kernel_size, l.dilation, rng));
            channels += filters;
        }
        let head = Conv::new(mode, channels, out_channels, 1, 1, false, rng);
        Self { layers, head }
    }

    pub fn forward(&mut self, x: &Feature, mode: BatchNormMode) -> Result<Feature> {
        let mut stack = vec![x.clone()];
        for layer in &mut self.layers {
            let input = Feature::concat(&stack.iter().collect::<Vec<_>>())?;
            stack.push(layer.forward(&input, mode)?);
        }
        self.head
            .forward(&Feature::concat(&stack.iter().collect::<Vec<_>>())?)
    }
}

impl Module for DilatedDenseBlock {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.accept(&join(prefix, &format!("layer{i}")), v);
        }
        self.head.accept(&join(prefix, "head"), v);
    }
}

/// Two 3×3 conv units followed by a 3×3 transpose convolution.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub first: ConvUnit,
    pub second: ConvUnit,
    pub out: Conv,
}

impl Refinement {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        filters: usize,
        out_channels: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Self {
        Self {
            first: ConvUnit::new(mode, in_channels, filters, 3, 1, rng),
            second: ConvUnit::new(mode, filters, filters, 3, 1, rng),
            out: Conv::new(mode, filters, out_channels, 3, 1, true, rng),
        }
    }

    pub fn forward(&mut self, x: &Feature, mode: BatchNormMode) -> Result<Feature> {
        let h = self.first.forward(x, mode)?;
        let h = self.second.forward(&h, mode)?;
        self.out.forward(&h)
    }
}

impl Module for Refinement {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.first.accept(&join(prefix, "first"), v);
        self.second.accept(&join(prefix, "second"), v);
        self.out.accept(&join(prefix, "out"), v);
    }
}

/// Parallel dense dilated branches, each reduced to one intermediate image,
/// merged by a refinement block.
#[derive(Clone, Debug)]
pub struct EnsembleDenoiser {
    pub branches: Vec<DilatedDenseBlock>,
    pub refinement: Refinement,
}

/// Output of one denoiser pass together with the per-branch images.
#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    pub output: Feature,
    pub intermediates: Vec<Feature>,
}

impl EnsembleDenoiser {
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let io = spec.image_channels();
        let branches: Vec<_> = spec
            .branches
            .iter()
            .map(|b| DilatedDenseBlock::new(b, io, spec.growth_filters, io, spec.mode, rng))
            .collect();
        let refinement = Refinement::new(
            io * branches.len(),
            spec.refinement_filters,
            io,
            spec.mode,
            rng,
        );
        Self {
            branches,
            refinement,
        }
    }

    pub fn forward(&mut self, x: &Feature, mode: BatchNormMode) -> Result<DenoiserOutput> {
        let intermediates = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, mode))
            .collect::<Result<Vec<_>>>()?;
        let merged = Feature::concat(&intermediates.iter().collect::<Vec<_>>())?;
        let output = self.refinement.forward(&merged, mode)?;
        Ok(DenoiserOutput {
            output,
            intermediates,
        })
    }
}

impl Module for EnsembleDenoiser {
    fn accept(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.accept(&join(prefix, &format!("branch{i}")), v);
        }
        self.refinement.accept(&join(prefix, "refinement"), v);
    }
}
