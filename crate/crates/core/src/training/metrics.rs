//! Image quality metrics on magnitude images in `[0, 1]`.

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};

/// Standard MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Smallest extent any scale may have.
pub const MIN_SCALE_EXTENT: usize = 8;

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(op, format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

/// `10·log10(1 / MSE)`; identical inputs give `+∞`.
pub fn psnr(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("psnr", pred, target)?;
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Number of dyadic scales an `h × w` image supports.
pub fn max_ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut extent = height.min(width);
    let mut scales = 0;
    while extent >= MIN_SCALE_EXTENT && scales < MS_SSIM_WEIGHTS.len() {
        scales += 1;
        extent /= 2;
    }
    scales
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| win[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean luminance and contrast-structure terms of single-scale SSIM.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let size = WINDOW.min(h).min(w);
    let size = if size % 2 == 0 { size - 1 } else { size };
    let win = gaussian_window(size);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let aa = filter_valid(&prod(a, a), h, w, &win);
    let bb = filter_valid(&prod(b, b), h, w, &win);
    let ab = filter_valid(&prod(a, b), h, w, &win);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mu_a.len() as f64;
    let (mut l, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        l += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += (2.0 * cov + c2) / (va + vb + c2);
    }
    (l / n, cs / n)
}

/// 2×2 average pooling, dropping a trailing odd row or column.
fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `h × w` magnitude images.
///
/// Contrast-structure terms of every scale and the luminance term of the
/// coarsest are combined with the standard exponents, renormalized to sum
/// to one when fewer than five scales are used. Negative contrast terms are
/// clamped to zero so the result stays in `[0, 1]`.
pub fn ms_ssim(pred: &[f64], target: &[f64], height: usize, width: usize, scales: usize) -> Result<f64> {
    check_len("ms_ssim", pred, target)?;
    if pred.len() != height * width {
        return Err(Error::shape(
            "ms_ssim",
            format!("{} values for a {height}x{width} image", pred.len()),
        ));
    }
    let max_feasible = max_ms_ssim_scales(height, width);
    if scales == 0 || scales > max_feasible {
        return Err(Error::TooSmallForScales {
            height,
            width,
            requested: scales,
            max_feasible,
        });
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut a, mut b) = (pred.to_vec(), target.to_vec());
    let (mut h, mut w) = (height, width);
    let mut score = 1.0;
    for (j, wt) in weights.iter().enumerate() {
        let (l, cs) = ssim_terms(&a, &b, h, w);
        score *= cs.max(0.0).powf(wt / total);
        if j + 1 == scales {
            score *= l.max(0.0).powf(wt / total);
        } else {
            let (da, nh, nw) = downsample(&a, h, w);
            let (db, _, _) = downsample(&b, h, w);
            (a, b, h, w) = (da, db, nh, nw);
        }
    }
    Ok(score)
}

/// Root-mean-square wrapped phase error over pixels whose target magnitude
/// is at least `threshold`; `None` when no pixel qualifies.
pub fn phase_rmse(pred: &ComplexTensor, target: &ComplexTensor, threshold: f64) -> Result<Option<f64>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "phase_rmse",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let (pr, pi) = (pred.re.data(), pred.im.data());
    let (tr, ti) = (target.re.data(), target.im.data());
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..pr.len() {
        if tr[i].hypot(ti[i]) >= threshold {
            // Angle of pred · conj(target), already wrapped to (−π, π].
            let d = (pi[i] * tr[i] - pr[i] * ti[i]).atan2(pr[i] * tr[i] + pi[i] * ti[i]);
            sum += d * d;
            n += 1;
        }
    }
    Ok((n > 0).then(|| (sum / n as f64).sqrt()))
}
