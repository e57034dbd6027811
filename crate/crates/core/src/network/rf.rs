use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::DilatedDenseBlock;
use super::layers::{Feature, Module, ParamKind, Visitor};
use super::spec::{rf_closed_form, BranchSpec, LayerSpec, Mode};
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::tensor::{self, BatchNormMode, Tensor};

const PROBE_WEIGHT: f64 = 0.05;

/// Overwrites a block for probing: every weight and scale positive, every
/// shift and cross term zero, running statistics at the identity.
struct Positive;

impl Visitor for Positive {
    fn param(&mut self, name: &str, kind: ParamKind, t: &mut Tensor) {
        let zero = kind == ParamKind::ConvBias
            || name.ends_with(".wi")
            || name.ends_with("gamma_ri")
            || name.contains("beta");
        let value = if zero { 0.0 } else { PROBE_WEIGHT };
        *t = Tensor::full(t.shape(), value).requires_grad(true);
    }

    fn buffer(&mut self, name: &str, values: &mut Vec<f64>) {
        let one = name.ends_with("var") || name.ends_with("v_rr") || name.ends_with("v_ii");
        values.iter_mut().for_each(|v| *v = if one { 1.0 } else { 0.0 });
    }
}

/// Receptive field side length of a built branch, measured as the bounding
/// box of the input gradient of the center output pixel.
///
/// Weights are replaced by positive constants on a copy of the block, so no
/// path through the network can cancel. `probe_size` must exceed the
/// closed-form receptive field, and the footprint must not touch the border.
pub fn rf_empirical(block: &DilatedDenseBlock, probe_size: usize) -> Result<usize> {
    let layers: Vec<LayerSpec> = block
        .layers
        .iter()
        .map(|l| LayerSpec::new(l.conv.kernel_size(), l.conv.dilation()))
        .collect();
    let expected = rf_closed_form(&layers);
    if probe_size <= expected {
        return Err(Error::invalid(
            "rf_empirical",
            format!(
                "probe of {probe_size} px cannot resolve a {expected} px receptive field; \
                 use at least {}",
                expected + 2
            ),
        ));
    }
    let mut probe = block.clone();
    probe.accept("", &mut Positive);

    let cin = probe.layers[0].conv.in_channels();
    let shape = [1, cin, probe_size, probe_size];
    let x_re = Tensor::ones(&shape).requires_grad(true);
    let input = match probe.head.mode() {
        Mode::Complex => Feature::Complex(ComplexTensor::new(x_re.clone(), Tensor::zeros(&shape))?),
        Mode::Real => Feature::Real(x_re.clone()),
    };
    let out = match probe.forward(&input, BatchNormMode::Eval)? {
        Feature::Real(t) => t,
        Feature::Complex(c) => c.re,
    };
    let centre = probe_size / 2;
    let mut pick = vec![0.0; probe_size * probe_size];
    pick[centre * probe_size + centre] = 1.0;
    let pick = Tensor::new(&[1, 1, probe_size, probe_size], pick)?;
    let pixel = tensor::sum(&tensor::mul(&tensor::slice_channels(&out, 0, 1)?, &pick)?);
    pixel.backward()?;
    let grad = x_re
        .grad()
        .ok_or_else(|| Error::invalid("rf_empirical", "output does not depend on the input"))?;

    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, g) in grad.iter().enumerate() {
        if *g != 0.0 {
            let (y, x) = ((i / probe_size) % probe_size, i % probe_size);
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if y0 == usize::MAX {
        return Err(Error::invalid("rf_empirical", "gradient footprint is empty"));
    }
    if y0 == 0 || x0 == 0 || y1 == probe_size - 1 || x1 == probe_size - 1 {
        return Err(Error::invalid(
            "rf_empirical",
            format!("footprint reaches the border of the {probe_size} px probe; use a larger probe"),
        ));
    }
    Ok((y1 - y0 + 1).max(x1 - x0 + 1))
}

/// Builds a real-mode branch from `spec` and measures its receptive field
/// with a probe just large enough to contain it.
pub fn branch_rf_empirical(spec: &BranchSpec) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = DilatedDenseBlock::new(spec, 1, 2, 1, Mode::Real, &mut rng);
    rf_empirical(&block, default_probe_size(spec))
}

/// Smallest odd probe that leaves a one-pixel margin around the target.
pub fn default_probe_size(spec: &BranchSpec) -> usize {
    rf_closed_form(&spec.layers).max(spec.target_rf) + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    #[test]
    fn presets_measure_their_closed_form() {
        let c5ed = NetworkSpec::preset("c5ed").unwrap();
        let got: Vec<usize> = c5ed.branches.iter().map(|b| branch_rf_empirical(b).unwrap()).collect();
        assert_eq!(got, vec![3, 7, 17, 35]);
        let abl = NetworkSpec::preset("ablation").unwrap();
        let got: Vec<usize> = abl.branches.iter().map(|b| branch_rf_empirical(b).unwrap()).collect();
        assert_eq!(got, vec![3, 7, 9, 9]);
    }

    #[test]
    fn small_probe_is_rejected() {
        let spec = BranchSpec::with_dilations(&[1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = DilatedDenseBlock::new(&spec, 1, 2, 1, Mode::Real, &mut rng);
        assert!(rf_empirical(&block, 7).is_err());
        assert!(rf_empirical(&block, 8).is_err());
        assert_eq!(rf_empirical(&block, 9).unwrap(), 7);
    }

    #[test]
    fn complex_and_trained_looking_blocks() {
        let spec = BranchSpec::with_dilations(&[1, 1, 2, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = DilatedDenseBlock::new(&spec, 1, 3, 1, Mode::Complex, &mut rng);
        assert_eq!(rf_empirical(&block, 21).unwrap(), 17);
        let block = DilatedDenseBlock::new(&spec, 2, 3, 2, Mode::Real, &mut rng);
        assert_eq!(rf_empirical(&block, 25).unwrap(), 17);
    }
}
