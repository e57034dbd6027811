//! Unitary 2-D discrete Fourier transforms over the last two axes.
//!
//! Both directions scale by `1/√(H·W)`, so the forward transform is
//! orthonormal and its adjoint is the inverse transform. That identity is
//! what the backward pass relies on.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn plane_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [lead @ .., h, w] if *h > 0 && *w > 0 => Ok((lead.iter().product(), *h, *w)),
        _ => Err(Error::shape(
            "fft2",
            format!("need at least two non-empty trailing axes, got {shape:?}"),
        )),
    }
}

/// Transforms every `H × W` plane of the split-complex buffers in place.
pub(crate) fn fft2_planes(
    re: &mut [f64],
    im: &mut [f64],
    planes: usize,
    h: usize,
    w: usize,
    direction: FftDirection,
) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);
    let scratch_len = row_fft
        .get_inplace_scratch_len()
        .max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::default(); scratch_len];
    let mut buf = vec![Complex64::default(); h * w];
    let mut column = vec![Complex64::default(); h];
    let norm = 1.0 / ((h * w) as f64).sqrt();
    for p in 0..planes {
        let range = p * h * w..(p + 1) * h * w;
        for ((b, r), i) in buf.iter_mut().zip(&re[range.clone()]).zip(&im[range.clone()]) {
            *b = Complex64::new(*r, *i);
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        for x in 0..w {
            for (y, c) in column.iter_mut().enumerate() {
                *c = buf[y * w + x];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for (y, c) in column.iter().enumerate() {
                buf[y * w + x] = *c;
            }
        }
        for ((b, r), i) in buf.iter().zip(&mut re[range.clone()]).zip(&mut im[range]) {
            *r = b.re * norm;
            *i = b.im * norm;
        }
    }
}

fn transform(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let (planes, h, w) = plane_dims(x.shape())?;
    let direction = |inv: bool| {
        if inv {
            FftDirection::Inverse
        } else {
            FftDirection::Forward
        }
    };
    let mut re = x.re.data().to_vec();
    let mut im = x.im.data().to_vec();
    fft2_planes(&mut re, &mut im, planes, h, w, direction(inverse));

    // The adjoint of the unitary transform is the opposite transform: a
    // cotangent g on the real output is (g + 0i) pulled back, one on the
    // imaginary output is (0 + ig) pulled back.
    let adjoint = move |g: &[f64], on_imag: bool| {
        let mut gr;
        let mut gi;
        if on_imag {
            gr = vec![0.0; g.len()];
            gi = g.to_vec();
        } else {
            gr = g.to_vec();
            gi = vec![0.0; g.len()];
        }
        fft2_planes(&mut gr, &mut gi, planes, h, w, direction(!inverse));
        vec![Some(gr), Some(gi)]
    };
    let op = if inverse { "ifft2" } else { "fft2" };
    let shape = x.shape().to_vec();
    let out_re = Tensor::from_op(shape.clone(), re, op, &[&x.re, &x.im], move |g, _| {
        adjoint(g, false)
    });
    let out_im = Tensor::from_op(shape, im, op, &[&x.re, &x.im], move |g, _| adjoint(g, true));
    ComplexTensor::new(out_re, out_im)
}

/// Unitary forward 2-D DFT over the last two axes (DC at index 0).
pub fn fft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, false)
}

/// Unitary inverse 2-D DFT over the last two axes.
pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, true)
}

fn roll_planes(data: &[f64], shape: &[usize], shift_y: usize, shift_x: usize) -> Vec<f64> {
    let (planes, h, w) = plane_dims(shape).expect("validated by caller");
    let mut out = vec![0.0; data.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for x in 0..w {
                out[base + ((y + shift_y) % h) * w + (x + shift_x) % w] = data[base + y * w + x];
            }
        }
    }
    out
}

/// Moves the zero frequency from index 0 to `(H/2, W/2)`. Detached.
pub fn fftshift(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (_, h, w) = plane_dims(x.shape())?;
    let shape = x.shape();
    ComplexTensor::new(
        Tensor::new(shape, roll_planes(x.re.data(), shape, h / 2, w / 2))?,
        Tensor::new(shape, roll_planes(x.im.data(), shape, h / 2, w / 2))?,
    )
}

/// Inverse of [`fftshift`]. Detached.
pub fn ifftshift(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (_, h, w) = plane_dims(x.shape())?;
    let shape = x.shape();
    ComplexTensor::new(
        Tensor::new(shape, roll_planes(x.re.data(), shape, h - h / 2, w - w / 2))?,
        Tensor::new(shape, roll_planes(x.im.data(), shape, h - h / 2, w - w / 2))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N²) unitary DFT of one plane.
    fn naive_dft(re: &[f64], im: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut or = vec![0.0; h * w];
        let mut oi = vec![0.0; h * w];
        let norm = 1.0 / ((h * w) as f64).sqrt();
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let (s, c) = ang.sin_cos();
                        let (a, b) = (re[y * w + x], im[y * w + x]);
                        sr += a * c - b * s;
                        si += a * s + b * c;
                    }
                }
                or[u * w + v] = sr * norm;
                oi[u * w + v] = si * norm;
            }
        }
        (or, oi)
    }

    #[test]
    fn matches_direct_dft_on_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (h, w) in [(5, 7), (6, 9), (8, 8)] {
            let x = ComplexTensor::new(
                Tensor::randn(&[h, w], &mut rng),
                Tensor::randn(&[h, w], &mut rng),
            )
            .unwrap();
            let k = fft2(&x).unwrap();
            let (er, ei) = naive_dft(x.re.data(), x.im.data(), h, w);
            for i in 0..h * w {
                assert!((k.re.data()[i] - er[i]).abs() < 1e-12);
                assert!((k.im.data()[i] - ei[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_has_single_dc_coefficient() {
        let c = 0.75;
        let x = ComplexTensor::from_real(Tensor::full(&[1, 1, 8, 16], c));
        let k = fft2(&x).unwrap();
        assert!((k.re.data()[0] - c * (128f64).sqrt()).abs() < 1e-12);
        let rest = k.re.data()[1..]
            .iter()
            .chain(k.im.data())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rest < 1e-12);
    }

    #[test]
    fn shift_roundtrip_and_dc_position() {
        let mut d = vec![0.0; 6 * 5];
        d[0] = 1.0;
        let x = ComplexTensor::from_real(Tensor::new(&[6, 5], d).unwrap());
        let s = fftshift(&x).unwrap();
        assert_eq!(s.re.data()[3 * 5 + 2], 1.0);
        assert_eq!(ifftshift(&s).unwrap().re.data(), x.re.data());
    }
}
