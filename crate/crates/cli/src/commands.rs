use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use c5ed_core::io::{matrix_csv, write_pgm, write_text};
use c5ed_core::kspace::make_gaussian_mask;
use c5ed_core::network::{branch_rf_empirical, load_weights, parameter_breakdown, rf_closed_form};
use c5ed_core::run::{self, write_json, CheckpointMeta, Seeds, SplitName, MANIFEST_FILE};
use c5ed_core::tensor::{no_grad, BatchNormMode};
use c5ed_core::training::{magnitude_image, make_phantom, Batch, PhantomConfig, PhaseMode, Sample};
use c5ed_core::{CascadeModel, Error, MaskFamily, Mode, NetworkSpec, RunManifest, TrainConfig};
use serde_json::json;

use crate::{BranchesArgs, DataArgs, EvalArgs, MaskArgs, ModeArg, ReplayArgs, RfArgs, SplitArg, TrainArgs};

const DEFAULT_REDUCTION: f64 = 4.0;
const DEFAULT_CENTER_FRACTION: f64 = 0.08;

fn timestamp() -> chrono::DateTime<chrono::Local> {
    chrono::Local::now()
}

/// `<out>/<timestamp>-s<seed>` unless `run_dir` names the directory
/// explicitly. Refuses a directory that already holds a manifest.
fn prepare_run_dir(out: &Path, run_dir: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let dir = match run_dir {
        Some(d) => d.to_path_buf(),
        None => out.join(format!("{}-s{seed}", timestamp().format("%Y%m%d-%H%M%S%.3f"))),
    };
    if dir.join(MANIFEST_FILE).exists() {
        bail!("{} already contains a run", dir.display());
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn mask(a: &MaskArgs) -> Result<()> {
    let m = make_gaussian_mask(a.height, a.width, a.reduction, a.center_fraction, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let values = m.matrix();
    write_pgm(&a.out.join("mask.pgm"), &values, m.height, m.width)?;
    write_text(&a.out.join("mask.csv"), &matrix_csv(&values, m.height, m.width)?)?;
    let stats = m.stats();
    write_json(&a.out.join("mask.json"), &stats)?;
    println!(
        "{}x{} mask, R={}: {} of {} columns sampled ({:.4}), center tile {} columns",
        m.height, m.width, a.reduction, stats.sampled_columns, m.width, stats.sampled_fraction, stats.center_columns
    );
    Ok(())
}

fn load_spec(path: Option<&Path>, preset: Option<&str>) -> Result<NetworkSpec> {
    let spec = match (path, preset) {
        (Some(p), _) => NetworkSpec::load(p).with_context(|| format!("loading spec {}", p.display()))?,
        (None, Some(name)) => NetworkSpec::preset(name)?,
        (None, None) => NetworkSpec::preset("c5ed")?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn rf(a: &RfArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), a.preset.as_deref())?;
    println!("{}", spec.name);
    println!("branch  dilations        target  closed  empirical  status");
    let mut failed = 0;
    for (i, b) in spec.branches.iter().enumerate() {
        let closed = rf_closed_form(&b.layers);
        let empirical = branch_rf_empirical(b)?;
        let ok = closed == empirical && closed == b.target_rf;
        failed += usize::from(!ok);
        let dil: Vec<String> = b.layers.iter().map(|l| l.dilation.to_string()).collect();
        println!(
            "{:<6}  {:<15}  {:>6}  {:>6}  {:>9}  {}",
            i + 1,
            dil.join(","),
            b.target_rf,
            closed,
            empirical,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    ensure!(failed == 0, "{failed} branch(es) disagree");
    Ok(())
}

fn phantom_config(d: &DataArgs, seed: u64) -> PhantomConfig {
    let base = PhantomConfig::default();
    PhantomConfig {
        size: d.size.unwrap_or(base.size),
        count: d.count.unwrap_or(base.count),
        phase: if d.smooth_phase { PhaseMode::Smooth } else { base.phase },
        seed,
        ..base
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut spec = load_spec(a.spec.as_deref(), a.spec.is_none().then_some(a.preset.as_str()))?;
    if let Some(m) = a.mode {
        spec = spec.with_mode(match m {
            ModeArg::Real => Mode::Real,
            ModeArg::Complex => Mode::Complex,
        });
    }
    let seeds = Seeds::derive(a.seed);
    let mut masks = MaskFamily::new(
        a.data.reduction.unwrap_or(DEFAULT_REDUCTION),
        a.data.center_fraction.unwrap_or(DEFAULT_CENTER_FRACTION),
        seeds.masks,
    );
    masks.regenerate_per_epoch = !a.freeze_masks;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: seeds.shuffle,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let phantoms = phantom_config(&a.data, seeds.phantoms);
    let dir = prepare_run_dir(&a.out, a.run_dir.as_deref(), a.seed)?;
    let mut m = RunManifest::train(&dir, spec, cfg, masks, phantoms, seeds);
    m.created = timestamp().to_rfc3339();
    m.write()?;
    println!("run directory: {}", dir.display());
    execute_train(&m, &dir)
}

fn execute_train(m: &RunManifest, dir: &Path) -> Result<()> {
    print_parameters(&CascadeModel::new(&m.spec, 0)?)?;
    let epochs = m.train.as_ref().map_or(0, |c| c.epochs);
    let result = run::run_train(m, dir, |r| {
        println!(
            "epoch {:>3}/{epochs}  train {:.6}  val {:.6}  psnr {:.3}  ms-ssim {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_psnr, r.val_msssim
        );
    });
    let t = match result {
        Err(e @ Error::Diverged { .. }) => {
            return Err(e).context(format!("partial artifacts kept in {}", dir.display()))
        }
        r => r?,
    };
    if let Some(r) = &t.test {
        let s = &r.summary;
        println!(
            "test: psnr {:.3} dB (zero-filled {:.3}), ms-ssim {:.4} (zero-filled {:.4})",
            s.mean_psnr, s.mean_zero_filled_psnr, s.mean_ms_ssim, s.mean_zero_filled_ms_ssim
        );
    }
    println!("best epoch {}; checkpoint {}", t.best_epoch, t.checkpoint.display());
    Ok(())
}

fn print_parameters(model: &CascadeModel) -> Result<()> {
    let own = parameter_breakdown(model);
    println!("parameters: {} ({} in conv filters)", own.total, own.filters());
    if model.spec().mode == Mode::Complex {
        let twin = parameter_breakdown(&CascadeModel::new(&model.spec().real_twin(), 0)?);
        println!(
            "real-valued twin: {} ({} in conv filters); filter ratio {:.3}",
            twin.total,
            twin.filters(),
            own.filters() as f64 / twin.filters() as f64
        );
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let checkpoint = std::fs::canonicalize(&a.checkpoint)
        .with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let (_, wm) = load_weights(&checkpoint)?;
    let meta: CheckpointMeta = serde_json::from_value(wm.metadata.clone())
        .context("checkpoint metadata lacks the training data description")?;
    if let Some(size) = a.data.size {
        ensure!(
            size == meta.phantoms.size,
            "checkpoint was trained on {0}x{0} images, requested {size}x{size}",
            meta.phantoms.size
        );
    }
    let seeds = a.seed.map_or_else(|| meta.seeds.clone(), Seeds::derive);
    let d = &a.data;
    let phantoms = PhantomConfig {
        count: d.count.unwrap_or(meta.phantoms.count),
        phase: if d.smooth_phase { PhaseMode::Smooth } else { meta.phantoms.phase },
        seed: seeds.phantoms,
        ..meta.phantoms.clone()
    };
    let masks = MaskFamily {
        reduction_factor: d.reduction.unwrap_or(meta.masks.reduction_factor),
        center_fraction: d.center_fraction.unwrap_or(meta.masks.center_fraction),
        seed: seeds.masks,
        ..meta.masks.clone()
    };
    let split = match a.split {
        SplitArg::Train => SplitName::Train,
        SplitArg::Validation => SplitName::Validation,
        SplitArg::Test => SplitName::Test,
    };
    let dir = prepare_run_dir(&a.out, a.run_dir.as_deref(), seeds.root)?;
    let mut m = RunManifest::eval(&dir, wm.spec, &checkpoint, split, a.max_images, masks, phantoms, seeds);
    m.created = timestamp().to_rfc3339();
    m.write()?;
    println!("run directory: {}", dir.display());
    let s = run::run_eval(&m, &dir)?.summary;
    println!(
        "{} images: psnr {:.3} dB (zero-filled {:.3}), ms-ssim {:.4} (zero-filled {:.4})",
        s.images, s.mean_psnr, s.mean_zero_filled_psnr, s.mean_ms_ssim, s.mean_zero_filled_ms_ssim
    );
    Ok(())
}

pub fn branches(a: &BranchesArgs) -> Result<()> {
    let (mut model, wm) = load_weights(&a.checkpoint)?;
    let k = wm.spec.branches.len();
    ensure!(k >= 2, "{} has {k} branch(es); not an ensemble model", a.checkpoint.display());
    let phase = if a.smooth_phase { PhaseMode::Smooth } else { PhaseMode::None };
    let x_f = make_phantom(a.size, a.image_seed, phase)?;
    let mask = make_gaussian_mask(a.size, a.size, a.reduction, a.center_fraction, a.image_seed)?;
    let sample = Sample::new(&x_f, mask)?;
    let batch = Batch::new(&[&sample])?;
    let out = no_grad(|| model.forward(&batch.x_u, &batch.constraint, BatchNormMode::Eval))?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let n = a.size;
    let images: Vec<Vec<f64>> = out.first_stage_branches.iter().map(magnitude_image).collect();
    for (i, img) in images.iter().enumerate() {
        write_pgm(&a.out.join(format!("branch{}.pgm", i + 1)), img, n, n)?;
    }
    write_pgm(&a.out.join("input.pgm"), &magnitude_image(&sample.x_u), n, n)?;
    write_pgm(&a.out.join("output.pgm"), &magnitude_image(&out.output), n, n)?;
    write_pgm(&a.out.join("target.pgm"), &magnitude_image(&sample.x_f), n, n)?;

    let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let pairwise: Vec<Vec<f64>> = images.iter().map(|x| images.iter().map(|y| l2(x, y)).collect()).collect();
    let record = json!({
        "checkpoint": a.checkpoint,
        "image_seed": a.image_seed,
        "size": n,
        "reduction_factor": a.reduction,
        "center_fraction": a.center_fraction,
        "phase": phase,
        "target_rf": wm.spec.branches.iter().map(|b| b.target_rf).collect::<Vec<_>>(),
        "pairwise_l2": pairwise,
    });
    write_json(&a.out.join("branches.json"), &record)?;
    for (i, b) in wm.spec.branches.iter().enumerate() {
        println!("branch {} (rf {}): branch{}.pgm", i + 1, b.target_rf, i + 1);
    }
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<()> {
    let original = RunManifest::load(&a.manifest)?;
    let src = if a.manifest.is_dir() {
        a.manifest.clone()
    } else {
        a.manifest.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let dest = match &a.run_dir {
        Some(d) => d.clone(),
        None => src.join(format!("replay-{}", timestamp().format("%Y%m%d-%H%M%S%.3f"))),
    };
    let dest = prepare_run_dir(&dest, Some(&dest), original.seeds.root)?;
    println!("replaying {} into {}", src.display(), dest.display());
    let report = run::replay(&a.manifest, &dest, &timestamp().to_rfc3339())?;
    let mut differing = Vec::new();
    for (name, same) in &report {
        println!("{:<24} {}", name.display(), if *same { "identical" } else { "DIFFERS" });
        if !same {
            differing.push(name.display().to_string());
        }
    }
    if !differing.is_empty() {
        bail!("replay differs in {}", differing.join(", "));
    }
    Ok(())
}
