//! Fourier-domain simulation of Cartesian undersampling.
//!
//! k-space arrays are kept in FFT order (DC at index 0) everywhere except
//! for visualization, where [`KSpace::centered`] shifts DC to the middle.

mod fft;
mod mask;

pub use fft::{fft2, fftshift, ifft2, ifftshift};
pub use mask::{
    batch_field, center_start, center_width, column_budget, gaussian_sigma, make_gaussian_mask,
    MaskStats, SamplingMask,
};

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::tensor::{self, l1_loss, mul, Tensor};

/// A k-space array together with its frequency layout.
#[derive(Debug, Clone)]
pub struct KSpace {
    pub data: ComplexTensor,
    /// `true` when DC sits at `(H/2, W/2)` rather than at index 0.
    pub centered: bool,
}

impl KSpace {
    pub fn from_fft_order(data: ComplexTensor) -> Self {
        Self {
            data,
            centered: false,
        }
    }

    /// The same samples with DC moved to the center.
    pub fn centered(&self) -> Result<Self> {
        if self.centered {
            return Ok(self.clone());
        }
        Ok(Self {
            data: fftshift(&self.data)?,
            centered: true,
        })
    }

    /// The same samples in FFT order.
    pub fn fft_order(&self) -> Result<Self> {
        if !self.centered {
            return Ok(self.clone());
        }
        Ok(Self {
            data: ifftshift(&self.data)?,
            centered: false,
        })
    }
}

fn check_plane(op: &'static str, x: &ComplexTensor, mask: &SamplingMask) -> Result<()> {
    match x.shape() {
        [.., h, w] if (*h, *w) == (mask.height, mask.width) => Ok(()),
        s => Err(Error::shape(
            op,
            format!("array {s:?} vs mask {}x{}", mask.height, mask.width),
        )),
    }
}

/// A mask replicated to the full shape of the arrays it applies to.
fn mask_like(x: &ComplexTensor, mask: &SamplingMask) -> Result<Tensor> {
    let lead: usize = x.shape()[..x.shape().len() - 2].iter().product();
    Tensor::new(x.shape(), mask.field(lead, 1).data().to_vec())
}

fn masked(k: &ComplexTensor, field: &Tensor) -> Result<ComplexTensor> {
    ComplexTensor::new(mul(&k.re, field)?, mul(&k.im, field)?)
}

/// `k_u = M ⊙ F(x_f)` and the zero-filled image `x_u = F⁻¹(k_u)`.
pub fn undersample(x_f: &ComplexTensor, mask: &SamplingMask) -> Result<(KSpace, ComplexTensor)> {
    check_plane("undersample", x_f, mask)?;
    let field = mask_like(x_f, mask)?;
    let k_u = masked(&fft2(x_f)?, &field)?;
    // A full mask loses nothing; skip the roundtrip so x_u == x_f exactly.
    let x_u = if mask.columns.iter().all(|c| *c) { x_f.detach() } else { ifft2(&k_u)? };
    Ok((KSpace::from_fft_order(k_u), x_u))
}

/// Measured samples and the mask they were taken with, both expanded to the
/// shape of the images they constrain. Masks may differ per batch element.
#[derive(Debug, Clone)]
pub struct Constraint {
    /// Measured k-space, zero off the mask, FFT order.
    pub k_u: ComplexTensor,
    /// 0/1 field of the same shape as `k_u`, FFT order.
    pub mask: Tensor,
}

impl Constraint {
    pub fn new(k_u: ComplexTensor, mask: Tensor) -> Result<Self> {
        if k_u.shape() != mask.shape() {
            return Err(Error::shape(
                "Constraint::new",
                format!("k-space {:?} vs mask {:?}", k_u.shape(), mask.shape()),
            ));
        }
        Ok(Self {
            k_u: k_u.detach(),
            mask: mask.detach(),
        })
    }

    pub fn from_mask(k_u: &KSpace, mask: &SamplingMask) -> Result<Self> {
        let k = k_u.fft_order()?.data;
        check_plane("Constraint::from_mask", &k, mask)?;
        let field = mask_like(&k, mask)?;
        Self::new(k, field)
    }

    /// `F⁻¹(M ⊙ k_u + (1 − M) ⊙ F(x))`: sampled frequencies are replaced by
    /// the measurements, the rest are kept from `x`.
    pub fn apply(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        if x.shape() != self.k_u.shape() {
            return Err(Error::shape(
                "data_consistency",
                format!("image {:?} vs k-space {:?}", x.shape(), self.k_u.shape()),
            ));
        }
        let keep = Tensor::new(
            self.mask.shape(),
            self.mask.data().iter().map(|m| 1.0 - m).collect(),
        )?;
        let k = masked(&fft2(x)?, &keep)?;
        let measured = masked(&self.k_u, &self.mask)?;
        ifft2(&k.add(&measured)?)
    }

    /// Mean absolute difference between `k_u` and `M ⊙ F(x)`, averaged over
    /// both real and imaginary parts.
    pub fn consistency_loss(&self, x: &ComplexTensor) -> Result<Tensor> {
        if x.shape() != self.k_u.shape() {
            return Err(Error::shape(
                "kspace_consistency_loss",
                format!("image {:?} vs k-space {:?}", x.shape(), self.k_u.shape()),
            ));
        }
        let k = masked(&fft2(x)?, &self.mask)?;
        let measured = masked(&self.k_u, &self.mask)?;
        Ok(tensor::scale(
            &tensor::add(&l1_loss(&k.re, &measured.re)?, &l1_loss(&k.im, &measured.im)?)?,
            0.5,
        ))
    }
}

/// Hard data consistency of `x_pred` against the samples `k_u` taken with `mask`.
pub fn data_consistency(
    x_pred: &ComplexTensor,
    k_u: &KSpace,
    mask: &SamplingMask,
) -> Result<ComplexTensor> {
    check_plane("data_consistency", x_pred, mask)?;
    Constraint::from_mask(k_u, mask)?.apply(x_pred)
}

/// `‖k_u − M ⊙ F(x_pred)‖₁`, as a mean over both parts of every element.
pub fn kspace_consistency_loss(
    x_pred: &ComplexTensor,
    k_u: &KSpace,
    mask: &SamplingMask,
) -> Result<Tensor> {
    check_plane("kspace_consistency_loss", x_pred, mask)?;
    Constraint::from_mask(k_u, mask)?.consistency_loss(x_pred)
}

/// Divides by the largest elementwise magnitude; returns the divisor.
pub fn magnitude_normalize(x: &ComplexTensor) -> Result<(ComplexTensor, f64)> {
    let scale = x.max_magnitude();
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::invalid(
            "magnitude_normalize",
            format!("maximum magnitude is {scale}"),
        ));
    }
    Ok((x.scale(1.0 / scale), scale))
}

/// Undoes [`magnitude_normalize`].
pub fn denormalize(x: &ComplexTensor, scale: f64) -> ComplexTensor {
    x.scale(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, shape: &[usize]) -> ComplexTensor {
        ComplexTensor::new(Tensor::randn(shape, rng), Tensor::randn(shape, rng)).unwrap()
    }

    fn max_diff(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        a.re.data()
            .iter()
            .zip(b.re.data())
            .chain(a.im.data().iter().zip(b.im.data()))
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn full_and_empty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(&mut rng, &[1, 1, 8, 8]);
        let (_, xu) = undersample(&x, &SamplingMask::full(8, 8)).unwrap();
        assert!(max_diff(&x, &xu) < 1e-10);
        let (ku, xu) = undersample(&x, &SamplingMask::empty(8, 8)).unwrap();
        assert!(xu.max_magnitude() == 0.0);
        let y = random_image(&mut rng, &[1, 1, 8, 8]);
        let dc = data_consistency(&y, &ku, &SamplingMask::empty(8, 8)).unwrap();
        assert!(max_diff(&dc, &y) < 1e-12);
    }

    #[test]
    fn unsampled_frequencies_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_image(&mut rng, &[2, 1, 16, 16]);
        let mask = make_gaussian_mask(16, 16, 4.0, 0.125, 2).unwrap();
        let (_, xu) = undersample(&x, &mask).unwrap();
        let k = fft2(&xu).unwrap();
        let field = mask.field(2, 1);
        for ((m, r), i) in field.data().iter().zip(k.re.data()).zip(k.im.data()) {
            if *m == 0.0 {
                assert!(r.abs() < 1e-12 && i.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_mask_replacement_ignores_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_image(&mut rng, &[1, 1, 8, 8]);
        let mask = SamplingMask::full(8, 8);
        let (ku, _) = undersample(&x, &mask).unwrap();
        let y = random_image(&mut rng, &[1, 1, 8, 8]);
        let dc = data_consistency(&y, &ku, &mask).unwrap();
        assert!(max_diff(&dc, &ifft2(&ku.data).unwrap()) < 1e-12);
        let zero = kspace_consistency_loss(&ifft2(&ku.data).unwrap(), &ku, &mask).unwrap();
        assert!(zero.item().unwrap() < 1e-12);
    }

    #[test]
    fn normalization_roundtrip() {
        let x = ComplexTensor::new(
            Tensor::new(&[3], vec![0.0, 4.0, -1.0]).unwrap(),
            Tensor::new(&[3], vec![2.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let (n, s) = magnitude_normalize(&x).unwrap();
        assert_eq!(s, 4.0);
        assert!((n.max_magnitude() - 1.0).abs() < 1e-15);
        let (_, s1) = magnitude_normalize(&n).unwrap();
        assert_eq!(s1, 1.0);
        assert!(max_diff(&denormalize(&n, s), &x) < 1e-12);
        assert!(magnitude_normalize(&ComplexTensor::zeros(&[4])).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let x = ComplexTensor::zeros(&[1, 1, 8, 8]);
        let mask = SamplingMask::full(8, 16);
        assert!(matches!(undersample(&x, &mask), Err(Error::Shape { .. })));
    }
}
