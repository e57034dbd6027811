//! Synthetic data, losses, metrics and the optimization loop.

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod phantom;
mod trainer;

pub use loss::{combined_loss, image_l1, LossWeights};
pub use metrics::{max_ms_ssim_scales, ms_ssim, phase_rmse, psnr};
pub use optim::{Adam, AdamConfig};
pub use phantom::{make_phantom, PhantomConfig, PhantomSet, PhaseMode};
pub use trainer::{
    batch_loss, best_epoch, evaluate, history_csv, magnitude_image, prepare_split, train, Batch,
    EpochRecord, EvalReport, EvalSummary, ImageMetrics, MaskFamily, Sample, Split, TrainConfig,
    TrainOutcome, HISTORY_HEADER, PHASE_MAGNITUDE_THRESHOLD,
};

/// Mixes `parts` into `seed` with SplitMix64 steps, giving independent
/// streams for each (seed, purpose, index) combination.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts
        .iter()
        .fold(mix(seed), |acc, p| mix(acc.rotate_left(23) ^ mix(p.wrapping_add(1))))
}
