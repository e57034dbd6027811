//! One finite-difference case per differentiable operation.

use c5ed_core::complex::{
    complex_batchnorm, complex_conv2d, complex_conv2d_transpose, crelu, ComplexBNState,
    ComplexKernel,
};
use c5ed_core::kspace::{fft2, ifft2, make_gaussian_mask, undersample, Constraint};
use c5ed_core::tensor::{self as t, BatchNormMode, ConvParams, RunningStats, Tensor};
use c5ed_core::training::{combined_loss, image_l1, LossWeights};
use c5ed_core::{ComplexTensor, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_tensor;

pub type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
/// The scalar under test; the `u64` is a per-run seed for fixed,
/// non-differentiated context such as masks.
pub type Scalar = Box<dyn Fn(&[Tensor], u64) -> Result<Tensor>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub f: Scalar,
}

/// Reduces to a scalar with fixed, non-uniform weights so that every output
/// element contributes a distinct amount.
pub fn project(x: &Tensor) -> Result<Tensor> {
    let w: Vec<f64> = (0..x.numel()).map(|j| (1.3 * j as f64 + 0.7).sin()).collect();
    Ok(t::sum(&t::mul(x, &Tensor::new(x.shape(), w)?)?))
}

pub fn project_complex(x: &ComplexTensor) -> Result<Tensor> {
    let im = project(&x.im)?;
    Ok(t::add(&project(&x.re)?, &t::scale(&im, 0.6))?)
}

fn cx(a: &Tensor, b: &Tensor) -> ComplexTensor {
    ComplexTensor::new(a.clone(), b.clone()).expect("same shape")
}

fn img(rng: &mut ChaCha8Rng) -> Tensor {
    random_tensor(&[2, 3, 5, 6], rng)
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 0.5, 2.0, rng)
}

fn case(name: &'static str, inputs: Inputs, f: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(move |x, _| f(x)),
    }
}

fn seeded(name: &'static str, inputs: Inputs, f: impl Fn(&[Tensor], u64) -> Result<Tensor> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Context randomness, decorrelated from the stream that drew the inputs.
fn context_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee)
}

fn image_pair(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![random_tensor(&[2, 1, 8, 8], r), random_tensor(&[2, 1, 8, 8], r)]
}

fn dilated() -> ConvParams {
    ConvParams {
        stride: 1,
        padding: 2,
        dilation: 2,
    }
}

fn strided() -> ConvParams {
    ConvParams {
        stride: 2,
        padding: 1,
        dilation: 1,
    }
}

fn constraint(rng: &mut ChaCha8Rng) -> Constraint {
    let x = ComplexTensor::new(random_tensor(&[2, 1, 8, 8], rng), random_tensor(&[2, 1, 8, 8], rng))
        .expect("same shape");
    let mask = make_gaussian_mask(8, 8, 2.0, 0.25, rng.gen()).expect("feasible");
    let (k_u, _) = undersample(&x, &mask).expect("shapes agree");
    Constraint::from_mask(&k_u, &mask).expect("shapes agree")
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("add", |r| vec![img(r), img(r)], |x| project(&t::add(&x[0], &x[1])?)),
        case("sub", |r| vec![img(r), img(r)], |x| project(&t::sub(&x[0], &x[1])?)),
        case("mul", |r| vec![img(r), img(r)], |x| project(&t::mul(&x[0], &x[1])?)),
        case("scale", |r| vec![img(r)], |x| project(&t::scale(&x[0], -1.7))),
        case("neg", |r| vec![img(r)], |x| project(&t::neg(&x[0]))),
        case("add_scalar", |r| vec![img(r)], |x| project(&t::add_scalar(&x[0], 0.4))),
        case("sqrt", |r| vec![positive(r, &[2, 3, 5, 6])], |x| project(&t::sqrt(&x[0])?)),
        case("recip", |r| vec![positive(r, &[2, 3, 5, 6])], |x| project(&t::recip(&x[0])?)),
        case("relu", |r| vec![img(r)], |x| project(&t::relu(&x[0]))),
        case("abs", |r| vec![img(r)], |x| project(&t::abs(&x[0]))),
        case("sum", |r| vec![img(r)], |x| Ok(t::sum(&t::mul(&x[0], &x[0])?))),
        case("mean", |r| vec![img(r)], |x| Ok(t::mean(&t::mul(&x[0], &x[0])?))),
        case("l1_loss", |r| vec![img(r), img(r)], |x| t::l1_loss(&x[0], &x[1])),
        case(
            "concat_channels",
            |r| vec![img(r), random_tensor(&[2, 1, 5, 6], r)],
            |x| project(&t::concat_channels(&[&x[0], &x[1]])?),
        ),
        case("slice_channels", |r| vec![img(r)], |x| project(&t::slice_channels(&x[0], 1, 2)?)),
        case("channel_mean", |r| vec![img(r)], |x| project(&t::channel_mean(&x[0])?)),
        case(
            "add_channel",
            |r| vec![img(r), random_tensor(&[3], r)],
            |x| project(&t::add_channel(&x[0], &x[1])?),
        ),
        case(
            "mul_channel",
            |r| vec![img(r), random_tensor(&[3], r)],
            |x| project(&t::mul_channel(&x[0], &x[1])?),
        ),
        case(
            "conv2d",
            |r| vec![img(r), random_tensor(&[4, 3, 3, 3], r), random_tensor(&[4], r)],
            |x| project(&t::conv2d(&x[0], &x[1], Some(&x[2]), ConvParams::same(3, 1))?),
        ),
        case(
            "conv2d_dilated",
            |r| vec![img(r), random_tensor(&[2, 3, 3, 3], r)],
            |x| project(&t::conv2d(&x[0], &x[1], None, dilated())?),
        ),
        case(
            "conv2d_strided",
            |r| vec![random_tensor(&[2, 3, 5, 7], r), random_tensor(&[2, 3, 3, 3], r), random_tensor(&[2], r)],
            |x| project(&t::conv2d(&x[0], &x[1], Some(&x[2]), strided())?),
        ),
        case(
            "conv2d_pointwise",
            |r| vec![img(r), random_tensor(&[2, 3, 1, 1], r)],
            |x| project(&t::conv2d(&x[0], &x[1], None, ConvParams::default())?),
        ),
        case(
            "conv2d_transpose",
            |r| vec![img(r), random_tensor(&[3, 2, 3, 3], r), random_tensor(&[2], r)],
            |x| project(&t::conv2d_transpose(&x[0], &x[1], Some(&x[2]), ConvParams::same(3, 1))?),
        ),
        case(
            "conv2d_transpose_strided",
            |r| vec![img(r), random_tensor(&[3, 2, 3, 3], r)],
            |x| project(&t::conv2d_transpose(&x[0], &x[1], None, strided())?),
        ),
        case(
            "batchnorm2d_train",
            |r| vec![img(r), random_tensor(&[3], r), random_tensor(&[3], r)],
            |x| {
                let mut running = RunningStats::new(3);
                project(&t::batchnorm2d(&x[0], &x[1], &x[2], &mut running, BatchNormMode::Train, 1e-5, 0.1)?)
            },
        ),
        case(
            "batchnorm2d_eval",
            |r| vec![img(r), random_tensor(&[3], r), random_tensor(&[3], r)],
            |x| {
                let mut running = RunningStats {
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![0.5, 1.5, 2.0],
                };
                project(&t::batchnorm2d(&x[0], &x[1], &x[2], &mut running, BatchNormMode::Eval, 1e-5, 0.1)?)
            },
        ),
        case(
            "complex_conv2d",
            |r| {
                vec![
                    img(r),
                    img(r),
                    random_tensor(&[2, 3, 3, 3], r),
                    random_tensor(&[2, 3, 3, 3], r),
                    random_tensor(&[2], r),
                    random_tensor(&[2], r),
                ]
            },
            |x| {
                let k = ComplexKernel::new(x[2].clone(), x[3].clone(), x[4].clone(), x[5].clone())?;
                project_complex(&complex_conv2d(&cx(&x[0], &x[1]), &k, dilated())?)
            },
        ),
        case(
            "complex_conv2d_transpose",
            |r| {
                vec![
                    img(r),
                    img(r),
                    random_tensor(&[3, 2, 3, 3], r),
                    random_tensor(&[3, 2, 3, 3], r),
                    random_tensor(&[2], r),
                    random_tensor(&[2], r),
                ]
            },
            |x| {
                let k = ComplexKernel::new(x[2].clone(), x[3].clone(), x[4].clone(), x[5].clone())?;
                project_complex(&complex_conv2d_transpose(&cx(&x[0], &x[1]), &k, ConvParams::same(3, 1))?)
            },
        ),
        case("crelu", |r| vec![img(r), img(r)], |x| project_complex(&crelu(&cx(&x[0], &x[1])))),
        case(
            "complex_batchnorm_train",
            |r| {
                vec![
                    img(r),
                    img(r),
                    positive(r, &[3]),
                    positive(r, &[3]),
                    Tensor::uniform(&[3], -0.3, 0.3, r),
                    random_tensor(&[3], r),
                    random_tensor(&[3], r),
                ]
            },
            |x| {
                let mut s = ComplexBNState::new(3);
                s.gamma_rr = x[2].clone();
                s.gamma_ii = x[3].clone();
                s.gamma_ri = x[4].clone();
                s.beta_re = x[5].clone();
                s.beta_im = x[6].clone();
                project_complex(&complex_batchnorm(&cx(&x[0], &x[1]), &mut s, BatchNormMode::Train)?)
            },
        ),
        case(
            "complex_batchnorm_eval",
            |r| vec![img(r), img(r), positive(r, &[3]), random_tensor(&[3], r)],
            |x| {
                let mut s = ComplexBNState::new(3);
                s.running_mean_re = vec![0.1, 0.0, -0.1];
                s.running_v_rr = vec![1.5, 0.7, 1.0];
                s.running_v_ii = vec![0.9, 1.2, 2.0];
                s.running_v_ri = vec![0.2, -0.3, 0.1];
                s.gamma_rr = x[2].clone();
                s.beta_im = x[3].clone();
                project_complex(&complex_batchnorm(&cx(&x[0], &x[1]), &mut s, BatchNormMode::Eval)?)
            },
        ),
        case(
            "fft2",
            |r| vec![random_tensor(&[2, 1, 6, 5], r), random_tensor(&[2, 1, 6, 5], r)],
            |x| project_complex(&fft2(&cx(&x[0], &x[1]))?),
        ),
        case(
            "ifft2",
            |r| vec![random_tensor(&[1, 2, 4, 7], r), random_tensor(&[1, 2, 4, 7], r)],
            |x| project_complex(&ifft2(&cx(&x[0], &x[1]))?),
        ),
        seeded("data_consistency", image_pair, |x, seed| {
            let c = constraint(&mut context_rng(seed));
            project_complex(&c.apply(&cx(&x[0], &x[1]))?)
        }),
        seeded("combined_loss", image_pair, |x, seed| {
            let mut rng = context_rng(seed);
            let c = constraint(&mut rng);
            let target = cx(&random_tensor(&[2, 1, 8, 8], &mut rng), &random_tensor(&[2, 1, 8, 8], &mut rng));
            let pred = cx(&x[0], &x[1]);
            t::add(
                &combined_loss(&pred, &target, &c, LossWeights { image: 1.0, kspace: 0.7 })?,
                &image_l1(&pred, &target)?,
            )
        }),
    ]
}
