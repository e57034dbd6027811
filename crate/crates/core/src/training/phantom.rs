use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::kspace::magnitude_normalize;
use crate::tensor::Tensor;

/// Largest magnitude of any phase polynomial coefficient.
pub const PHASE_COEFF_BOUND: f64 = PI / 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    None,
    Smooth,
}

/// One ellipse in normalized `[−1, 1]²` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - self.cx, v - self.cy);
        let p = (du * c + dv * s) / self.a;
        let q = (-du * s + dv * c) / self.b;
        p * p + q * q <= 1.0
    }
}

/// Everything drawn to synthesize one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub size: usize,
    pub ellipses: Vec<Ellipse>,
    /// `φ = c₀u + c₁v + c₂u² + c₃uv + c₄v²`; all zero without phase.
    pub phase_coeffs: [f64; 5],
    pub noise: f64,
}

/// Normalized grid coordinate of pixel `i` on an `n`-pixel axis.
pub fn grid_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

pub fn phase_at(c: &[f64; 5], u: f64, v: f64) -> f64 {
    c[0] * u + c[1] * v + c[2] * u * u + c[3] * u * v + c[4] * v * v
}

/// Bound on `|∇φ|` over `[−1, 1]²` for coefficients bounded by
/// [`PHASE_COEFF_BOUND`]: each partial is at most `4·bound` in magnitude.
pub fn phase_gradient_bound() -> f64 {
    4.0 * PHASE_COEFF_BOUND * std::f64::consts::SQRT_2
}

/// Draws the parameters of a phantom. 3 to 8 ellipses: a large outer one
/// and smaller inner structures that add or remove intensity.
pub fn sample_phantom_params(size: usize, seed: u64, phase: PhaseMode, noise: f64) -> PhantomParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(3..=8);
    let mut ellipses = Vec::with_capacity(count);
    ellipses.push(Ellipse {
        cx: rng.gen_range(-0.05..0.05),
        cy: rng.gen_range(-0.05..0.05),
        a: rng.gen_range(0.7..0.9),
        b: rng.gen_range(0.6..0.9),
        angle: rng.gen_range(-0.3..0.3),
        intensity: rng.gen_range(0.6..1.0),
    });
    for _ in 1..count {
        let sign = if rng.gen_bool(0.35) { -1.0 } else { 1.0 };
        ellipses.push(Ellipse {
            cx: rng.gen_range(-0.45..0.45),
            cy: rng.gen_range(-0.45..0.45),
            a: rng.gen_range(0.06..0.4),
            b: rng.gen_range(0.06..0.4),
            angle: rng.gen_range(0.0..PI),
            intensity: sign * rng.gen_range(0.1..0.5),
        });
    }
    let phase_coeffs = match phase {
        PhaseMode::None => [0.0; 5],
        PhaseMode::Smooth => {
            std::array::from_fn(|_| rng.gen_range(-PHASE_COEFF_BOUND..=PHASE_COEFF_BOUND))
        }
    };
    PhantomParams {
        size,
        ellipses,
        phase_coeffs,
        noise,
    }
}

/// Renders a `1 × 1 × S × S` complex phantom, normalized to peak magnitude 1.
pub fn render_phantom(p: &PhantomParams, noise_seed: u64) -> Result<ComplexTensor> {
    let s = p.size;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut re = vec![0.0; s * s];
    let mut im = vec![0.0; s * s];
    for y in 0..s {
        let v = grid_coord(y, s);
        for x in 0..s {
            let u = grid_coord(x, s);
            let m: f64 = p
                .ellipses
                .iter()
                .filter(|e| e.contains(u, v))
                .map(|e| e.intensity)
                .sum::<f64>()
                .max(0.0);
            let phi = phase_at(&p.phase_coeffs, u, v);
            re[y * s + x] = m * phi.cos();
            im[y * s + x] = m * phi.sin();
        }
    }
    if p.noise > 0.0 {
        for (r, i) in re.iter_mut().zip(im.iter_mut()) {
            let nr: f64 = StandardNormal.sample(&mut rng);
            let ni: f64 = StandardNormal.sample(&mut rng);
            *r += p.noise * nr;
            *i += p.noise * ni;
        }
    }
    let img = ComplexTensor::new(Tensor::new(&[1, 1, s, s], re)?, Tensor::new(&[1, 1, s, s], im)?)?;
    Ok(magnitude_normalize(&img)?.0)
}

/// A synthetic complex phantom: ellipses for magnitude and, in smooth mode,
/// a random quadratic phase.
pub fn make_phantom(size: usize, seed: u64, phase: PhaseMode) -> Result<ComplexTensor> {
    if size < 16 {
        return Err(Error::invalid(
            "make_phantom",
            format!("size must be at least 16, got {size}"),
        ));
    }
    render_phantom(&sample_phantom_params(size, seed, phase, 0.0), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub size: usize,
    pub count: usize,
    pub phase: PhaseMode,
    /// Standard deviation of complex Gaussian noise added before
    /// normalization.
    pub noise: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 32,
            count: 64,
            phase: PhaseMode::None,
            noise: 0.0,
            validation_fraction: 0.125,
            test_fraction: 0.125,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub config: PhantomConfig,
    pub params: Vec<PhantomParams>,
    pub train: Vec<ComplexTensor>,
    pub validation: Vec<ComplexTensor>,
    pub test: Vec<ComplexTensor>,
}

impl PhantomSet {
    pub fn generate(config: &PhantomConfig) -> Result<Self> {
        if config.size < 16 {
            return Err(Error::invalid(
                "PhantomSet::generate",
                format!("size must be at least 16, got {}", config.size),
            ));
        }
        let fractions = [config.validation_fraction, config.test_fraction];
        if fractions.iter().any(|f| !(0.0..1.0).contains(f)) || fractions.iter().sum::<f64>() >= 1.0 {
            return Err(Error::invalid("PhantomSet::generate", "split fractions must leave a training set"));
        }
        let n_val = (config.count as f64 * config.validation_fraction).round() as usize;
        let n_test = (config.count as f64 * config.test_fraction).round() as usize;
        if n_val == 0 || n_val + n_test >= config.count {
            return Err(Error::invalid(
                "PhantomSet::generate",
                format!(
                    "{} phantoms cannot be split into non-empty training and validation sets",
                    config.count
                ),
            ));
        }
        let mut params = Vec::with_capacity(config.count);
        let mut images = Vec::with_capacity(config.count);
        for i in 0..config.count {
            let seed = derive_seed(config.seed, &[0x5048_414e, i as u64]);
            let p = sample_phantom_params(config.size, seed, config.phase, config.noise);
            images.push(render_phantom(&p, seed ^ 0x4e4f_4953_45)?);
            params.push(p);
        }
        let test = images.split_off(config.count - n_test);
        let validation = images.split_off(config.count - n_test - n_val);
        Ok(Self {
            config: config.clone(),
            params,
            train: images,
            validation,
            test,
        })
    }
}
