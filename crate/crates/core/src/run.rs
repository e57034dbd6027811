//! Recorded training and evaluation runs: the manifest that describes one,
//! the artifacts it writes, and replay.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::{write_pgm, write_text};
use crate::network::{load_weights, parameter_breakdown, save_weights, CascadeModel, Mode, NetworkSpec, ParameterCount};
use crate::training::{
    derive_seed, evaluate, history_csv, magnitude_image, prepare_split, train, EpochRecord,
    EvalReport, ImageMetrics, MaskFamily, PhantomConfig, PhantomSet, Split, TrainConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_STEM: &str = "best";
pub const IMAGE_DIR: &str = "images";

/// Seeds used by a run, each derived once from the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub model: u64,
    pub phantoms: u64,
    pub masks: u64,
    pub shuffle: u64,
}

impl Seeds {
    pub fn derive(root: u64) -> Self {
        Self {
            root,
            model: derive_seed(root, &[1]),
            phantoms: derive_seed(root, &[2]),
            masks: derive_seed(root, &[3]),
            shuffle: derive_seed(root, &[4]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Validation => Split::Validation,
            SplitName::Test => Split::Test,
        }
    }
}

/// Everything needed to repeat a training or evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub created: String,
    pub out_dir: PathBuf,
    pub spec: NetworkSpec,
    pub train: Option<TrainConfig>,
    pub masks: MaskFamily,
    pub phantoms: PhantomConfig,
    pub seeds: Seeds,
    /// Weight manifest evaluated (eval runs only).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<SplitName>,
    #[serde(default)]
    pub max_images: Option<usize>,
}

impl RunManifest {
    pub fn train(out_dir: &Path, spec: NetworkSpec, cfg: TrainConfig, masks: MaskFamily, phantoms: PhantomConfig, seeds: Seeds) -> Self {
        Self {
            tool: "c5ed".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: Command::Train,
            created: String::new(),
            out_dir: out_dir.to_path_buf(),
            spec,
            train: Some(cfg),
            masks,
            phantoms,
            seeds,
            checkpoint: None,
            split: None,
            max_images: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn eval(
        out_dir: &Path,
        spec: NetworkSpec,
        checkpoint: &Path,
        split: SplitName,
        max_images: usize,
        masks: MaskFamily,
        phantoms: PhantomConfig,
        seeds: Seeds,
    ) -> Self {
        Self {
            command: Command::Eval,
            train: None,
            checkpoint: Some(checkpoint.to_path_buf()),
            split: Some(split),
            max_images: Some(max_images),
            ..Self::train(out_dir, spec, TrainConfig::default(), masks, phantoms, seeds)
        }
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out_dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Stored with a checkpoint so evaluation can rebuild the same data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phantoms: PhantomConfig,
    pub masks: MaskFamily,
    pub seeds: Seeds,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub test: Option<EvalReport>,
    pub metrics: Value,
}

/// Trains as `m` describes, writing `history.csv` after every epoch, then
/// the best checkpoint and `metrics.json`. On divergence the history so
/// far stays on disk.
pub fn run_train(m: &RunManifest, dir: &Path, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainRun> {
    let cfg = m
        .train
        .as_ref()
        .ok_or_else(|| Error::invalid("run_train", "manifest has no training config"))?;
    let data = PhantomSet::generate(&m.phantoms)?;
    let mut model = CascadeModel::new(&m.spec, m.seeds.model)?;
    let params = parameters(&model)?;

    let history_path = dir.join(HISTORY_FILE);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut write_err = None;
    let outcome = train(&mut model, &data, &m.masks, cfg, |r| {
        history.push(r.clone());
        if write_err.is_none() {
            write_err = write_text(&history_path, &history_csv(&history)).err();
        }
        on_epoch(r);
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = outcome?;
    let best = &outcome.history[outcome.best_epoch - 1];
    let meta = CheckpointMeta {
        phantoms: m.phantoms.clone(),
        masks: m.masks.clone(),
        seeds: m.seeds.clone(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        best_val_psnr: best.val_psnr,
    };
    let checkpoint = save_weights(&mut model, dir, CHECKPOINT_STEM, serde_json::to_value(&meta)?)?;

    let test = if data.test.is_empty() {
        None
    } else {
        let samples = prepare_split(&data.test, &m.masks, Split::Test, 0)?;
        Some(evaluate(&mut model, &samples, cfg.loss_weights)?)
    };
    let metrics = json!({
        "network": m.spec.name,
        "mode": m.spec.mode,
        "parameters": params,
        "epochs": cfg.epochs,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": num(outcome.best_val_loss),
        "best_val_psnr": num(best.val_psnr),
        "test": test.as_ref().map_or(Value::Null, evaluation_json),
    });
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    Ok(TrainRun {
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        checkpoint,
        test,
        metrics,
    })
}

/// Evaluates the manifest's checkpoint on one split; writes `metrics.json`
/// and magnitude PGMs of input, output, target and error for the first
/// `max_images` images.
pub fn run_eval(m: &RunManifest, dir: &Path) -> Result<EvalReport> {
    let checkpoint = m
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::invalid("run_eval", "manifest has no checkpoint"))?;
    let split = m.split.unwrap_or(SplitName::Test);
    let (mut model, wm) = load_weights(checkpoint)?;
    if wm.spec != m.spec {
        return Err(Error::Checkpoint(format!("{} no longer matches the manifest", checkpoint.display())));
    }
    let data = PhantomSet::generate(&m.phantoms)?;
    let images = match split {
        SplitName::Train => &data.train,
        SplitName::Validation => &data.validation,
        SplitName::Test => &data.test,
    };
    let samples = prepare_split(images, &m.masks, split.into(), 0)?;
    let r = evaluate(&mut model, &samples, Default::default())?;
    let metrics = json!({
        "network": m.spec.name,
        "split": split,
        "reduction_factor": m.masks.reduction_factor,
        "center_fraction": m.masks.center_fraction,
        "evaluation": evaluation_json(&r),
    });
    write_json(&dir.join(METRICS_FILE), &metrics)?;

    let img_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let n = m.phantoms.size;
    let shown = m.max_images.unwrap_or(0);
    for (i, (sample, recon)) in samples.iter().zip(&r.reconstructions).take(shown).enumerate() {
        let target = magnitude_image(&sample.x_f);
        let output = magnitude_image(recon);
        let error: Vec<f64> = output.iter().zip(&target).map(|(o, t)| (o - t).abs()).collect();
        for (tag, values) in [
            ("input", magnitude_image(&sample.x_u)),
            ("output", output),
            ("target", target),
            ("error", error),
        ] {
            write_pgm(&img_dir.join(format!("{i:03}-{tag}.pgm")), &values, n, n)?;
        }
    }
    Ok(r)
}

/// Files, relative to the run directory, that a replay must reproduce
/// byte for byte.
pub fn artifacts(m: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![PathBuf::from(METRICS_FILE)];
    match m.command {
        Command::Train => {
            out.push(HISTORY_FILE.into());
            out.push(format!("{CHECKPOINT_STEM}.json").into());
            out.push(format!("{CHECKPOINT_STEM}.bin").into());
        }
        Command::Eval => {
            let images = dir.join(IMAGE_DIR);
            let mut names = Vec::new();
            for e in std::fs::read_dir(&images).map_err(|e| Error::io(&images, e))? {
                let e = e.map_err(|e| Error::io(&images, e))?;
                names.push(Path::new(IMAGE_DIR).join(e.file_name()));
            }
            names.sort();
            out.extend(names);
        }
    }
    Ok(out)
}

/// Per-artifact outcome of a replay: `(relative path, identical)`.
pub type ReplayReport = Vec<(PathBuf, bool)>;

/// Re-runs the run recorded in `src` into `dest` and compares artifacts.
/// `dest` must exist; its manifest is written before any work starts.
pub fn replay(src: &Path, dest: &Path, created: &str) -> Result<ReplayReport> {
    let original = RunManifest::load(src)?;
    let src = if src.is_dir() { src.to_path_buf() } else { src.parent().unwrap_or(Path::new(".")).to_path_buf() };
    let expected = artifacts(&original, &src)?;
    let m = RunManifest {
        out_dir: dest.to_path_buf(),
        created: created.into(),
        ..original
    };
    m.write()?;
    match m.command {
        Command::Train => {
            run_train(&m, dest, |_| ())?;
        }
        Command::Eval => {
            run_eval(&m, dest)?;
        }
    }
    expected
        .into_iter()
        .map(|name| {
            let read = |d: &Path| {
                let p = d.join(&name);
                std::fs::read(&p).map_err(|e| Error::io(&p, e))
            };
            let same = read(&src)? == read(dest)?;
            Ok((name, same))
        })
        .collect()
}

/// A number as JSON, with non-finite values spelled out: JSON has no
/// infinity, and a perfect reconstruction has infinite PSNR.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

fn counts(c: &ParameterCount) -> Value {
    json!({
        "total": c.total,
        "filters": c.filters(),
        "conv_weights": c.conv_weights,
        "conv_biases": c.conv_biases,
        "norm": c.norm,
    })
}

/// Parameter totals; complex models also get those of their real twin,
/// which has the same filter shapes with real weights.
pub fn parameters(model: &CascadeModel) -> Result<Value> {
    let own = parameter_breakdown(model);
    let mut v = json!({ "model": counts(&own) });
    if model.spec().mode == Mode::Complex {
        let twin = parameter_breakdown(&CascadeModel::new(&model.spec().real_twin(), 0)?);
        v["real_twin"] = counts(&twin);
        v["filter_ratio"] = json!(own.filters() as f64 / twin.filters() as f64);
        v["total_ratio"] = json!(own.total as f64 / twin.total as f64);
    }
    Ok(v)
}

fn image_json(m: &ImageMetrics) -> Value {
    json!({
        "loss": num(m.loss),
        "psnr": num(m.psnr),
        "ms_ssim": num(m.ms_ssim),
        "zero_filled_psnr": num(m.zero_filled_psnr),
        "zero_filled_ms_ssim": num(m.zero_filled_ms_ssim),
        "phase_rmse": opt(m.phase_rmse),
        "zero_filled_phase_rmse": opt(m.zero_filled_phase_rmse),
    })
}

pub fn evaluation_json(r: &EvalReport) -> Value {
    let s = &r.summary;
    json!({
        "images": s.images,
        "ms_ssim_scales": s.ms_ssim_scales,
        "mean": {
            "loss": num(s.mean_loss),
            "psnr": num(s.mean_psnr),
            "ms_ssim": num(s.mean_ms_ssim),
            "phase_rmse": opt(s.mean_phase_rmse),
        },
        "zero_filled": {
            "psnr": num(s.mean_zero_filled_psnr),
            "ms_ssim": num(s.mean_zero_filled_ms_ssim),
            "phase_rmse": opt(s.mean_zero_filled_phase_rmse),
        },
        "psnr_gain_db": num(s.mean_psnr - s.mean_zero_filled_psnr),
        "per_image": r.per_image.iter().map(image_json).collect::<Vec<_>>(),
    })
}
