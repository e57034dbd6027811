use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance when flooring products like `W · (1/40)` that are integral in
/// exact arithmetic.
const FLOOR_SLACK: f64 = 1e-9;

/// Binary Cartesian sampling mask: one flag per phase-encode column,
/// replicated over all rows. Columns are stored in display order, with the
/// zero frequency at column `W/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub columns: Vec<bool>,
    pub reduction_factor: f64,
    pub center_fraction: f64,
    pub center_width: usize,
    pub seed: u64,
}

/// Summary record written next to a generated mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub height: usize,
    pub width: usize,
    pub reduction_factor: f64,
    pub center_fraction: f64,
    pub center_columns: usize,
    pub sampled_columns: usize,
    pub sampled_fraction: f64,
    pub seed: u64,
}

/// Standard deviation, in columns, of the sampling density around DC.
pub fn gaussian_sigma(width: usize) -> f64 {
    width as f64 / 6.0
}

/// Number of columns a mask of this width and reduction factor samples.
pub fn column_budget(width: usize, reduction_factor: f64) -> usize {
    (width as f64 / reduction_factor + FLOOR_SLACK).floor() as usize
}

/// Width of the always-sampled center tile.
pub fn center_width(width: usize, center_fraction: f64) -> usize {
    (width as f64 * center_fraction + FLOOR_SLACK).floor() as usize
}

/// First column of the center tile (display order).
pub fn center_start(width: usize, center: usize) -> usize {
    width / 2 - center / 2
}

/// Draws a variable-density 1-D Gaussian column mask.
///
/// The `⌊center_fraction·W⌋` columns around DC are always sampled; the rest
/// of the `⌊W/R⌋` budget is drawn without replacement with probability
/// proportional to `exp(−d²/2σ²)`, where `d` is the column's offset from DC
/// and `σ = W/6`.
pub fn make_gaussian_mask(
    height: usize,
    width: usize,
    reduction_factor: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("make_gaussian_mask", "empty mask"));
    }
    if !(reduction_factor >= 1.0 && reduction_factor.is_finite()) {
        return Err(Error::invalid(
            "make_gaussian_mask",
            format!("reduction factor must be >= 1, got {reduction_factor}"),
        ));
    }
    if !(0.0..=1.0).contains(&center_fraction) {
        return Err(Error::invalid(
            "make_gaussian_mask",
            format!("center fraction must lie in [0, 1], got {center_fraction}"),
        ));
    }
    let budget = column_budget(width, reduction_factor);
    let center = center_width(width, center_fraction);
    if budget < center {
        return Err(Error::InfeasibleMask { budget, center });
    }

    let mut columns = vec![false; width];
    let start = center_start(width, center);
    columns[start..start + center].iter_mut().for_each(|c| *c = true);

    let dc = (width / 2) as f64;
    let sigma = gaussian_sigma(width);
    let candidates: Vec<(usize, f64)> = (0..width)
        .filter(|j| !columns[*j])
        .map(|j| {
            let d = j as f64 - dc;
            (j, (-d * d / (2.0 * sigma * sigma)).exp())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = candidates
        .choose_multiple_weighted(&mut rng, budget - center, |c| c.1)
        .map_err(|e| Error::invalid("make_gaussian_mask", e.to_string()))?;
    for (j, _) in picked {
        columns[*j] = true;
    }

    Ok(SamplingMask {
        height,
        width,
        columns,
        reduction_factor,
        center_fraction,
        center_width: center,
        seed,
    })
}

impl SamplingMask {
    /// A mask with explicit column flags (display order).
    pub fn from_columns(height: usize, columns: Vec<bool>) -> Self {
        let width = columns.len();
        let sampled = columns.iter().filter(|c| **c).count().max(1);
        Self {
            height,
            width,
            columns,
            reduction_factor: width as f64 / sampled as f64,
            center_fraction: 0.0,
            center_width: 0,
            seed: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_columns(height, vec![true; width])
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_columns(height, vec![false; width])
    }

    pub fn sampled_columns(&self) -> usize {
        self.columns.iter().filter(|c| **c).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.sampled_columns() as f64 / self.width as f64
    }

    /// Column flags re-ordered so that DC sits at index 0, as produced by
    /// [`crate::kspace::fft2`].
    pub fn fft_order_columns(&self) -> Vec<bool> {
        let w = self.width;
        (0..w).map(|i| self.columns[(i + w / 2) % w]).collect()
    }

    /// `H × W` matrix of 0/1 values in display order.
    pub fn matrix(&self) -> Vec<f64> {
        let row: Vec<f64> = self.columns.iter().map(|c| f64::from(u8::from(*c))).collect();
        row.repeat(self.height)
    }

    /// The mask replicated over a `N × C × H × W` shape, in FFT order.
    pub fn field(&self, n: usize, c: usize) -> Tensor {
        let row: Vec<f64> = self
            .fft_order_columns()
            .iter()
            .map(|b| f64::from(u8::from(*b)))
            .collect();
        let data = row.repeat(n * c * self.height);
        Tensor::new(&[n, c, self.height, self.width], data).expect("sizes agree")
    }

    pub fn stats(&self) -> MaskStats {
        MaskStats {
            height: self.height,
            width: self.width,
            reduction_factor: self.reduction_factor,
            center_fraction: self.center_fraction,
            center_columns: self.center_width,
            sampled_columns: self.sampled_columns(),
            sampled_fraction: self.sampled_fraction(),
            seed: self.seed,
        }
    }
}

/// Stacks one mask per batch element into a `N × C × H × W` field.
pub fn batch_field(masks: &[&SamplingMask], channels: usize) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::invalid("batch_field", "no masks"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * channels * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::shape(
                "batch_field",
                format!("mask {}x{} vs {h}x{w}", m.height, m.width),
            ));
        }
        data.extend_from_slice(m.field(1, channels).data());
    }
    Tensor::new(&[masks.len(), channels, h, w], data)
}
