//! Helpers shared by the integration tests: a central finite-difference
//! gradient checker and small fixtures.
#![allow(dead_code)]

pub mod cases;

use c5ed_core::network::layers::for_each_param;
use c5ed_core::network::{CascadeModel, Mode, NetworkSpec};
use c5ed_core::tensor::{kink_signature, no_grad, Tensor};
use c5ed_core::{ComplexTensor, Result};
use rand::seq::index::sample;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so that gradients which are
/// zero up to rounding compare in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_rel: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst_rel < FD_REL_TOL
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Compares `analytic[i][j]` against central differences of `eval`, which
/// evaluates the scalar with element `j` of input `i` shifted by `delta`.
/// Coordinates are visited in random order until `max_coords` have been
/// checked; those whose ±h evaluations change the kink signature are
/// skipped, up to three times as many as are wanted.
fn compare<R: Rng>(
    analytic: &[Vec<f64>],
    mut eval: impl FnMut(Option<(usize, usize, f64)>) -> Result<f64>,
    max_coords: usize,
    rng: &mut R,
) -> Result<FdReport> {
    let total: usize = analytic.iter().map(Vec::len).sum();
    let (_, base_sig) = kink_signature(|| eval(None));
    let order = sample(rng, total, total).into_vec();
    let mut report = FdReport::default();
    for flat in order {
        if report.checked >= max_coords || report.skipped_kinks >= 3 * max_coords {
            break;
        }
        let (mut i, mut j) = (0, flat);
        while j >= analytic[i].len() {
            j -= analytic[i].len();
            i += 1;
        }
        let (plus, sp) = kink_signature(|| eval(Some((i, j, FD_STEP))));
        let (minus, sm) = kink_signature(|| eval(Some((i, j, -FD_STEP))));
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus? - minus?) / (2.0 * FD_STEP);
        report.worst_rel = report.worst_rel.max(rel_error(analytic[i][j], numeric));
        report.checked += 1;
    }
    Ok(report)
}

fn shifted(t: &Tensor, j: usize, delta: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[j] += delta;
    Tensor::new(t.shape(), data).expect("same shape")
}

/// Checks the gradient of the scalar `f(inputs)` with respect to every
/// input tensor.
pub fn check_fn<R: Rng>(
    inputs: &[Tensor],
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    max_coords: usize,
    rng: &mut R,
) -> Result<FdReport> {
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad(true)).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let detached: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    compare(
        &analytic,
        |p| {
            no_grad(|| {
                let mut xs = detached.clone();
                if let Some((i, j, d)) = p {
                    xs[i] = shifted(&xs[i], j, d);
                }
                f(&xs)?.item()
            })
        },
        max_coords,
        rng,
    )
}

/// Checks the gradient of `loss(model)` with respect to every parameter.
pub fn check_model<R: Rng>(
    model: &mut CascadeModel,
    loss: impl Fn(&mut CascadeModel) -> Result<Tensor>,
    max_coords: usize,
    rng: &mut R,
) -> Result<FdReport> {
    loss(model)?.backward()?;
    let mut params = Vec::new();
    for_each_param(model, |_, _, t| params.push(t.clone()));
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let report = compare(
        &analytic,
        |p| {
            let mut probe = model.clone();
            if let Some((i, j, d)) = p {
                let mut k = 0;
                for_each_param(&mut probe, |_, _, t| {
                    if k == i {
                        *t = shifted(t, j, d);
                    }
                    k += 1;
                });
            }
            no_grad(|| loss(&mut probe)?.item())
        },
        max_coords,
        rng,
    )?;
    for p in &params {
        p.zero_grad();
    }
    Ok(report)
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

pub fn random_complex<R: Rng>(shape: &[usize], rng: &mut R) -> ComplexTensor {
    ComplexTensor::new(random_tensor(shape, rng), random_tensor(shape, rng)).expect("same shape")
}

/// Two branches (the undilated RF-3 one and the most dilated one), two
/// stages, four filters: small enough for finite differences on 16×16
/// images.
pub fn tiny_spec(mode: Mode) -> NetworkSpec {
    let mut spec = NetworkSpec::preset("tiny").expect("preset").with_mode(mode);
    spec.name = "gradcheck".into();
    spec.branches = vec![spec.branches[0].clone(), spec.branches[3].clone()];
    spec.growth_filters = 4;
    spec.refinement_filters = 4;
    spec.cascade_depth = 2;
    spec
}

/// A two-image batch of 16×16 phantoms with its undersampled acquisition.
pub fn tiny_batch(seed: u64) -> c5ed_core::training::Batch {
    use c5ed_core::training::{make_phantom, prepare_split, Batch, MaskFamily, PhaseMode, Split};
    let images: Vec<ComplexTensor> = (0..2)
        .map(|i| make_phantom(16, seed * 2 + i, PhaseMode::Smooth).expect("size ok"))
        .collect();
    let samples = prepare_split(&images, &MaskFamily::new(4.0, 0.125, seed), Split::Train, 1)
        .expect("feasible masks");
    Batch::new(&samples.iter().collect::<Vec<_>>()).expect("same shapes")
}

/// Finite-difference check of the image loss of a tiny cascade with respect
/// to every parameter.
pub fn check_tiny_cascade(mode: Mode, seed: u64, max_coords: usize) -> Result<FdReport> {
    use c5ed_core::tensor::BatchNormMode;
    use c5ed_core::training::{combined_loss, LossWeights};
    use rand::SeedableRng;
    let spec = tiny_spec(mode);
    let mut model = CascadeModel::new(&spec, seed)?;
    let batch = tiny_batch(seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    check_model(
        &mut model,
        |m| {
            let out = m.forward(&batch.x_u, &batch.constraint, BatchNormMode::Train)?;
            // After hard DC the k-space term is rounding noise sitting on the
            // kink of |·|, so only the image term is differentiated here.
            let weights = LossWeights { image: 1.0, kspace: 0.0 };
            combined_loss(&out.output, &batch.x_f, &batch.constraint, weights)
        },
        max_coords,
        &mut rng,
    )
}

/// Runs every operation case and the tiny cascade in both modes over
/// `seeds`, returning one merged report per name.
pub fn gradient_suite(seeds: std::ops::Range<u64>, cascade_coords: usize) -> Result<Vec<(String, FdReport)>> {
    use rand::SeedableRng;
    let mut out = Vec::new();
    for case in cases::op_cases() {
        let mut total = FdReport::default();
        for seed in seeds.clone() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let inputs = (case.inputs)(&mut rng);
            total.merge(check_fn(&inputs, |x| (case.f)(x, seed), 200, &mut rng)?);
        }
        out.push((case.name.to_string(), total));
    }
    for (name, mode) in [("cascade_real", Mode::Real), ("cascade_complex", Mode::Complex)] {
        let mut total = FdReport::default();
        for seed in seeds.clone() {
            total.merge(check_tiny_cascade(mode, seed, cascade_coords)?);
        }
        out.push((name.to_string(), total));
    }
    Ok(out)
}
