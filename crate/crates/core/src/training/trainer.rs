use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss, LossWeights};
use super::metrics::{max_ms_ssim_scales, ms_ssim, phase_rmse, psnr};
use super::optim::{Adam, AdamConfig};
use super::derive_seed;
use super::phantom::PhantomSet;
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::kspace::{batch_field, make_gaussian_mask, undersample, Constraint, KSpace, SamplingMask};
use crate::network::{CascadeModel, StateDict};
use crate::tensor::{no_grad, BatchNormMode};

/// Pixels whose target magnitude is below this are left out of phase errors.
pub const PHASE_MAGNITUDE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Restore the epoch with the lowest validation loss after training;
    /// otherwise keep the last epoch.
    #[serde(default = "yes")]
    pub keep_best: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            adam: AdamConfig::default(),
            loss_weights: LossWeights::default(),
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("TrainConfig", "learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("TrainConfig", "batch_size and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// How sampling masks are drawn for each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFamily {
    pub reduction_factor: f64,
    pub center_fraction: f64,
    pub seed: u64,
    /// Draw a fresh training mask for every example in every epoch.
    pub regenerate_per_epoch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl MaskFamily {
    pub fn new(reduction_factor: f64, center_fraction: f64, seed: u64) -> Self {
        Self {
            reduction_factor,
            center_fraction,
            seed,
            regenerate_per_epoch: true,
        }
    }

    /// Mask for example `index` of `split`. Validation and test masks never
    /// depend on the epoch.
    pub fn mask(&self, size: (usize, usize), split: Split, epoch: usize, index: usize) -> Result<SamplingMask> {
        let (tag, epoch) = match split {
            Split::Train if self.regenerate_per_epoch => (1, epoch as u64),
            Split::Train => (1, 0),
            Split::Validation => (2, 0),
            Split::Test => (3, 0),
        };
        let seed = derive_seed(self.seed, &[tag, epoch, index as u64]);
        make_gaussian_mask(size.0, size.1, self.reduction_factor, self.center_fraction, seed)
    }
}

/// One fully sampled image with its simulated acquisition.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x_f: ComplexTensor,
    pub x_u: ComplexTensor,
    pub k_u: KSpace,
    pub mask: SamplingMask,
}

impl Sample {
    pub fn new(x_f: &ComplexTensor, mask: SamplingMask) -> Result<Self> {
        let (k_u, x_u) = undersample(x_f, &mask)?;
        Ok(Self {
            x_f: x_f.detach(),
            x_u,
            k_u,
            mask,
        })
    }
}

/// Simulates one acquisition per image of a split.
pub fn prepare_split(
    images: &[ComplexTensor],
    masks: &MaskFamily,
    split: Split,
    epoch: usize,
) -> Result<Vec<Sample>> {
    images
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let s = x.shape();
            Sample::new(x, masks.mask((s[2], s[3]), split, epoch, i)?)
        })
        .collect()
}

/// Samples stacked along the batch axis.
pub struct Batch {
    pub x_f: ComplexTensor,
    pub x_u: ComplexTensor,
    pub constraint: Constraint,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let cat = |f: &dyn Fn(&Sample) -> &ComplexTensor| {
            ComplexTensor::concat_batch(&samples.iter().map(|s| f(s)).collect::<Vec<_>>())
        };
        let x_f = cat(&|s| &s.x_f)?;
        let x_u = cat(&|s| &s.x_u)?;
        let k_u = cat(&|s| &s.k_u.data)?;
        let field = batch_field(&samples.iter().map(|s| &s.mask).collect::<Vec<_>>(), 1)?;
        Ok(Self {
            x_f,
            x_u,
            constraint: Constraint::new(k_u, field)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub loss: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub zero_filled_psnr: f64,
    pub zero_filled_ms_ssim: f64,
    pub phase_rmse: Option<f64>,
    pub zero_filled_phase_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub images: usize,
    pub ms_ssim_scales: usize,
    pub mean_loss: f64,
    pub mean_psnr: f64,
    pub mean_ms_ssim: f64,
    pub mean_zero_filled_psnr: f64,
    pub mean_zero_filled_ms_ssim: f64,
    pub mean_phase_rmse: Option<f64>,
    pub mean_zero_filled_phase_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_image: Vec<ImageMetrics>,
    pub summary: EvalSummary,
    pub reconstructions: Vec<ComplexTensor>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// Evaluates one image at a time in eval mode, so results do not depend on
/// how the images are grouped.
pub fn evaluate(model: &mut CascadeModel, samples: &[Sample], weights: LossWeights) -> Result<EvalReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("evaluate", "no samples"))?;
    let (h, w) = (first.x_f.shape()[2], first.x_f.shape()[3]);
    let scales = max_ms_ssim_scales(h, w);
    let mut per_image = Vec::with_capacity(samples.len());
    let mut reconstructions = Vec::with_capacity(samples.len());
    no_grad(|| -> Result<()> {
        for s in samples {
            let batch = Batch::new(&[s])?;
            let out = model.forward(&batch.x_u, &batch.constraint, BatchNormMode::Eval)?;
            let loss = combined_loss(&out.output, &batch.x_f, &batch.constraint, weights)?.item()?;
            let target = s.x_f.magnitude();
            let pred = out.output.magnitude();
            let zf = s.x_u.magnitude();
            let phase = |x: &ComplexTensor| phase_rmse(x, &s.x_f, PHASE_MAGNITUDE_THRESHOLD);
            per_image.push(ImageMetrics {
                loss,
                psnr: psnr(&pred, &target)?,
                ms_ssim: ms_ssim(&pred, &target, h, w, scales)?,
                zero_filled_psnr: psnr(&zf, &target)?,
                zero_filled_ms_ssim: ms_ssim(&zf, &target, h, w, scales)?,
                phase_rmse: phase(&out.output)?,
                zero_filled_phase_rmse: phase(&s.x_u)?,
            });
            reconstructions.push(out.output.detach());
        }
        Ok(())
    })?;
    let summary = EvalSummary {
        images: per_image.len(),
        ms_ssim_scales: scales,
        mean_loss: mean(per_image.iter().map(|m| m.loss)),
        mean_psnr: mean(per_image.iter().map(|m| m.psnr)),
        mean_ms_ssim: mean(per_image.iter().map(|m| m.ms_ssim)),
        mean_zero_filled_psnr: mean(per_image.iter().map(|m| m.zero_filled_psnr)),
        mean_zero_filled_ms_ssim: mean(per_image.iter().map(|m| m.zero_filled_ms_ssim)),
        mean_phase_rmse: mean_opt(per_image.iter().map(|m| m.phase_rmse)),
        mean_zero_filled_phase_rmse: mean_opt(per_image.iter().map(|m| m.zero_filled_phase_rmse)),
    };
    Ok(EvalReport {
        per_image,
        summary,
        reconstructions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
    pub val_msssim: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_psnr,val_msssim";

/// History as CSV. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            r.epoch, r.train_loss, r.val_loss, r.val_psnr, r.val_msssim
        )
        .expect("writing to a String");
    }
    out
}

/// Epoch with the least validation loss, earliest on ties.
pub fn best_epoch(history: &[EpochRecord]) -> Option<&EpochRecord> {
    history.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
        Some(b) if b.val_loss <= r.val_loss => Some(b),
        _ => Some(r),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_state: StateDict,
}

/// Trains `model` with Adam on shuffled mini-batches of `data.train`,
/// validating after every epoch. With `keep_best` the model ends in the
/// state of its best validation epoch. `on_epoch` sees every record as it is
/// produced.
pub fn train(
    model: &mut CascadeModel,
    data: &PhantomSet,
    masks: &MaskFamily,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::invalid("train", "training and validation splits must be non-empty"));
    }
    let validation = prepare_split(&data.validation, masks, Split::Validation, 0)?;
    let mut opt = Adam::new(cfg.learning_rate, cfg.adam)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, StateDict)> = None;
    let fixed_train = if masks.regenerate_per_epoch {
        None
    } else {
        Some(prepare_split(&data.train, masks, Split::Train, 0)?)
    };
    for epoch in 1..=cfg.epochs {
        let fresh;
        let samples = match &fixed_train {
            Some(s) => s,
            None => {
                fresh = prepare_split(&data.train, masks, Split::Train, epoch)?;
                &fresh
            }
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64])));

        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::new(&chunk.iter().map(|i| &samples[*i]).collect::<Vec<_>>())?;
            let out = model.forward(&batch.x_u, &batch.constraint, BatchNormMode::Train)?;
            let loss = combined_loss(&out.output, &batch.x_f, &batch.constraint, cfg.loss_weights)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            loss.backward()?;
            opt.step(model);
            total += value * chunk.len() as f64;
        }

        let report = evaluate(model, &validation, cfg.loss_weights)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / samples.len() as f64,
            val_loss: report.summary.mean_loss,
            val_psnr: report.summary.mean_psnr,
            val_msssim: report.summary.mean_ms_ssim,
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: record.val_loss,
            });
        }
        on_epoch(&record);
        if best.as_ref().map_or(true, |(_, l, _)| record.val_loss < *l) {
            best = Some((epoch, record.val_loss, StateDict::capture(model)));
        }
        history.push(record);
    }
    let (best_epoch, best_val_loss, best_state) = best.expect("at least one epoch");
    if cfg.keep_best {
        best_state.restore(model)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
        best_state,
    })
}

/// Mean loss of one batch, without touching running statistics.
pub fn batch_loss(model: &mut CascadeModel, batch: &Batch, weights: LossWeights) -> Result<f64> {
    let mut probe = model.clone();
    let out = no_grad(|| probe.forward(&batch.x_u, &batch.constraint, BatchNormMode::Train))?;
    combined_loss(&out.output, &batch.x_f, &batch.constraint, weights)?.item()
}

/// The magnitude of `x` as an `H × W` image (first batch element).
pub fn magnitude_image(x: &ComplexTensor) -> Vec<f64> {
    let plane = x.shape()[x.shape().len() - 2..].iter().product();
    x.magnitude()[..plane].to_vec()
}
