//! Acceptance suite. Runs every criterion once and prints one PASS/FAIL
//! line per criterion; exits nonzero if any fails.
//!
//! `C5ED_ACCEPT_ONLY=1,5,6` runs a subset.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use c5ed_core::complex::{complex_conv2d, ComplexKernel};
use c5ed_core::kspace::{fft2, ifft2, make_gaussian_mask, undersample, Constraint};
use c5ed_core::network::{branch_rf_empirical, parameter_breakdown, rf_closed_form, Mode};
use c5ed_core::run::{self, Seeds, SplitName, TrainRun};
use c5ed_core::tensor::{no_grad, BatchNormMode, ConvParams};
use c5ed_core::training::{MaskFamily, PhantomConfig, PhaseMode, TrainConfig};
use c5ed_core::{CascadeModel, ComplexTensor, NetworkSpec, RunManifest, Tensor};
use common::{random_complex, FD_REL_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = (bool, String);

struct Suite {
    only: Option<Vec<usize>>,
    results: Vec<(usize, &'static str, bool)>,
}

impl Suite {
    fn wants(&self, id: usize) -> bool {
        self.only.as_ref().map_or(true, |o| o.contains(&id))
    }

    /// Runs one criterion; `budget` is its runtime limit, if it has one.
    fn run(&mut self, id: usize, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        if !self.wants(id) {
            return;
        }
        let start = Instant::now();
        let (mut pass, mut detail) = f();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > b {
                pass = false;
                detail.push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
            }
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        self.results.push((id, name, pass));
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

// 1

fn rf_agreement() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (preset, expected) in [("c5ed", [3, 7, 17, 35]), ("ablation", [3, 7, 9, 9])] {
        let spec = NetworkSpec::preset(preset).unwrap();
        let got: Vec<(usize, usize)> = spec
            .branches
            .iter()
            .map(|b| (rf_closed_form(&b.layers), branch_rf_empirical(b).unwrap()))
            .collect();
        pass &= got.len() == 4
            && got.iter().zip(expected).all(|((c, e), x)| *c == x && *e == x)
            && spec.branches.iter().zip(expected).all(|(b, x)| b.target_rf == x);
        let shown: Vec<String> = got.iter().map(|(c, e)| format!("{c}/{e}")).collect();
        notes.push(format!("{preset} closed/empirical {}", shown.join(" ")));
    }
    (pass, notes.join("; "))
}

// 2

/// Direct complex arithmetic: `Σ (a + ib)(c + id)` over taps, plus bias.
fn naive_complex_conv(x: &ComplexTensor, k: &ComplexKernel, p: ConvParams) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let (xs, ws) = (x.shape(), k.wr.shape());
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, ks) = (ws[0], ws[2]);
    let span = p.dilation * (ks - 1) + 1;
    let oh = (h + 2 * p.padding - span) / p.stride + 1;
    let ow = (w + 2 * p.padding - span) / p.stride + 1;
    let (xr, xi, wr, wi) = (x.re.data(), x.im.data(), k.wr.data(), k.wi.data());
    let mut re = vec![0.0; n * cout * oh * ow];
    let mut im = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = (k.bias_re.data()[co], k.bias_im.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let y = (oy * p.stride + ky * p.dilation) as isize - p.padding as isize;
                                let xx = (ox * p.stride + kx * p.dilation) as isize - p.padding as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xi_ = ((b * cin + ci) * h + y as usize) * w + xx as usize;
                                let wi_ = ((co * cin + ci) * ks + ky) * ks + kx;
                                let (a, bb) = (xr[xi_], xi[xi_]);
                                let (c, d) = (wr[wi_], wi[wi_]);
                                acc.0 += a * c - bb * d;
                                acc.1 += a * d + bb * c;
                            }
                        }
                    }
                    let o = ((b * cout + co) * oh + oy) * ow + ox;
                    re[o] = acc.0;
                    im[o] = acc.1;
                }
            }
        }
    }
    (vec![n, cout, oh, ow], re, im)
}

fn complex_conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 100 {
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let p = ConvParams {
            stride: rng.gen_range(1..=2),
            padding: rng.gen_range(0..=3),
            dilation: rng.gen_range(1..=3),
        };
        let span = p.dilation * (k - 1) + 1;
        if h + 2 * p.padding < span || w + 2 * p.padding < span {
            continue;
        }
        if (h + 2 * p.padding - span) % p.stride != 0 || (w + 2 * p.padding - span) % p.stride != 0 {
            continue;
        }
        let x = random_complex(&[rng.gen_range(1..=2), cin, h, w], &mut rng);
        let kernel = ComplexKernel::new(
            Tensor::randn(&[cout, cin, k, k], &mut rng),
            Tensor::randn(&[cout, cin, k, k], &mut rng),
            Tensor::randn(&[cout], &mut rng),
            Tensor::randn(&[cout], &mut rng),
        )
        .unwrap();
        let got = complex_conv2d(&x, &kernel, p).unwrap();
        let (shape, re, im) = naive_complex_conv(&x, &kernel, p);
        assert_eq!(got.shape(), shape.as_slice());
        for (a, b) in got.re.data().iter().zip(&re).chain(got.im.data().iter().zip(&im)) {
            worst = worst.max((a - b).abs());
        }
        cases += 1;
    }
    (worst <= 1e-12, format!("{cases} cases, max abs error {worst:.2e}"))
}

// 3

fn gradient_suite() -> Outcome {
    let reports = common::gradient_suite(0..20, 30).unwrap();
    let failed: Vec<&str> = reports
        .iter()
        .filter(|(n, r)| !r.passed() || (n.starts_with("cascade") && r.checked < 200))
        .map(|(n, _)| n.as_str())
        .collect();
    let worst = reports.iter().map(|(_, r)| r.worst_rel).fold(0.0, f64::max);
    let checked: usize = reports.iter().map(|(_, r)| r.checked).sum();
    (
        failed.is_empty(),
        format!(
            "{} ops + 2 cascades, 20 seeds, {checked} coordinates, worst relative error {worst:.2e} (< {FD_REL_TOL:.0e}){}",
            reports.len() - 2,
            if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
        ),
    )
}

// 4

fn data_consistency() -> Outcome {
    let mut worst_k = 0.0f64;
    let mut worst_idem = 0.0f64;
    let mut cases = 0;
    for seed in 0..10u64 {
        for mode in [Mode::Real, Mode::Complex] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = NetworkSpec::preset("tiny").unwrap().with_mode(mode);
            let mut model = CascadeModel::new(&spec, seed).unwrap();
            let n = [16, 20, 32][seed as usize % 3];
            let x_f = random_complex(&[2, 1, n, n], &mut rng);
            let r = rng.gen_range(2.0..8.0);
            let mask = make_gaussian_mask(n, n, r, 0.1, seed).unwrap();
            let (k_u, x_u) = undersample(&x_f, &mask).unwrap();
            let c = Constraint::from_mask(&k_u, &mask).unwrap();
            let bn = if seed % 2 == 0 { BatchNormMode::Train } else { BatchNormMode::Eval };
            let out = no_grad(|| model.forward(&x_u, &c, bn)).unwrap().output;
            let k = fft2(&out).unwrap();
            for (i, m) in c.mask.data().iter().enumerate() {
                if *m == 1.0 {
                    worst_k = worst_k
                        .max((k.re.data()[i] - c.k_u.re.data()[i]).abs())
                        .max((k.im.data()[i] - c.k_u.im.data()[i]).abs());
                }
            }
            let again = c.apply(&out).unwrap();
            for (a, b) in again.re.data().iter().zip(out.re.data()).chain(again.im.data().iter().zip(out.im.data())) {
                worst_idem = worst_idem.max((a - b).abs());
            }
            cases += 1;
        }
    }
    (
        worst_k <= 1e-10 && worst_idem <= 1e-10,
        format!("{cases} model/input pairs: sampled k-space error {worst_k:.2e}, DC idempotence error {worst_idem:.2e}"),
    )
}

// 5

fn transforms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut roundtrip, mut parseval) = (0.0f64, 0.0f64);
    for n in [16, 32, 64, 33] {
        for _ in 0..5 {
            let x = random_complex(&[2, 1, n, n], &mut rng);
            let k = fft2(&x).unwrap();
            let back = ifft2(&k).unwrap();
            for (a, b) in back.re.data().iter().zip(x.re.data()).chain(back.im.data().iter().zip(x.im.data())) {
                roundtrip = roundtrip.max((a - b).abs());
            }
            let energy = |t: &ComplexTensor| t.magnitude().iter().map(|m| m * m).sum::<f64>();
            let (ex, ek) = (energy(&x), energy(&k));
            parseval = parseval.max((ex - ek).abs() / ex);
        }
    }
    (
        roundtrip <= 1e-10 && parseval <= 1e-10,
        format!("sizes 16, 32, 64, 33: roundtrip error {roundtrip:.2e}, Parseval relative error {parseval:.2e}"),
    )
}

// 6

fn mask_statistics() -> Outcome {
    const W: usize = 320;
    const TRIALS: usize = 1000;
    let mut pass = true;
    let mut worst_z = f64::NEG_INFINITY; // largest band-bottom excess
    let mut notes = Vec::new();
    for r in [4.0, 6.0, 8.0] {
        for denom in [20.0, 40.0, 80.0] {
            let cf = 1.0 / denom;
            let budget = (W as f64 / r).floor() as usize;
            let center = (W as f64 * cf).floor() as usize;
            let start = W / 2 - center / 2;
            let mut hits = vec![0usize; W];
            for seed in 0..TRIALS as u64 {
                let m = make_gaussian_mask(1, W, r, cf, seed).unwrap();
                pass &= m.columns.iter().filter(|c| **c).count() == budget;
                pass &= m.columns[start..start + center].iter().all(|c| *c);
                for (h, c) in hits.iter_mut().zip(&m.columns) {
                    *h += usize::from(*c);
                }
            }
            // Monotone decay within 3σ bands: some non-increasing profile
            // must pass through every column's band [p̂ − 3σ, p̂ + 3σ], i.e.
            // no band may start above the lowest band top nearer the tile.
            let freq: Vec<f64> = hits.iter().map(|h| *h as f64 / TRIALS as f64).collect();
            let band = |p: f64| {
                let q = p.clamp(0.5 / TRIALS as f64, 1.0 - 0.5 / TRIALS as f64);
                3.0 * (q * (1.0 - q) / TRIALS as f64).sqrt()
            };
            let right: Vec<usize> = (start + center..W).collect();
            let left: Vec<usize> = (0..start).rev().collect();
            for side in [right, left] {
                let mut lowest_top = f64::INFINITY;
                for j in &side {
                    let (p, b) = (freq[*j], band(freq[*j]));
                    worst_z = worst_z.max((p - b) - lowest_top);
                    pass &= p - b <= lowest_top;
                    lowest_top = lowest_top.min(p + b);
                }
                pass &= freq[side[0]] > freq[*side.last().unwrap()];
            }
            notes.push(format!("R={r} 1/{denom}: {budget} cols, tile {center}"));
        }
    }
    (
        pass,
        format!(
            "{TRIALS} seeds x 9 configs; {}; monotone profile fits all 3σ bands (tightest margin {:.4})",
            notes.join(", "),
            -worst_z
        ),
    )
}

// 7 to 10: training under one shared protocol.

const EPOCHS: usize = 50;

fn protocol(dir: &Path, preset: &str, mode: Mode, phase: PhaseMode, root: u64) -> RunManifest {
    let seeds = Seeds::derive(root);
    let spec = NetworkSpec::preset(preset).unwrap().with_mode(mode);
    let cfg = TrainConfig {
        epochs: EPOCHS,
        seed: seeds.shuffle,
        ..TrainConfig::default()
    };
    let masks = MaskFamily::new(4.0, 0.08, seeds.masks);
    let phantoms = PhantomConfig {
        size: 32,
        count: 64,
        phase,
        seed: seeds.phantoms,
        ..PhantomConfig::default()
    };
    RunManifest::train(dir, spec, cfg, masks, phantoms, seeds)
}

struct Trained {
    dir: TempDir,
    run: TrainRun,
}

impl Trained {
    fn gain(&self) -> f64 {
        let s = &self.run.test.as_ref().unwrap().summary;
        s.mean_psnr - s.mean_zero_filled_psnr
    }

    fn psnr(&self) -> f64 {
        self.run.test.as_ref().unwrap().summary.mean_psnr
    }

    /// The learning floor: ≥ 1 dB over zero-filled on the test split and
    /// validation loss at the best epoch strictly below epoch 1's.
    fn floor(&self) -> (bool, String) {
        let h = &self.run.history;
        let best = &h[self.run.best_epoch - 1];
        let s = &self.run.test.as_ref().unwrap().summary;
        (
            self.gain() >= 1.0 && best.val_loss < h[0].val_loss,
            format!(
                "test psnr {:.3} vs zero-filled {:.3} (+{:.3} dB); val loss {:.5} at epoch 1 -> {:.5} at best epoch {}",
                s.mean_psnr,
                s.mean_zero_filled_psnr,
                self.gain(),
                h[0].val_loss,
                best.val_loss,
                self.run.best_epoch
            ),
        )
    }
}

fn train_protocol(preset: &str, mode: Mode, phase: PhaseMode, root: u64) -> Trained {
    let dir = TempDir::new().unwrap();
    let m = protocol(dir.path(), preset, mode, phase, root);
    m.write().unwrap();
    let run = run::run_train(&m, dir.path(), |_| ()).unwrap();
    Trained { dir, run }
}

fn main() -> ExitCode {
    let only = std::env::var("C5ED_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut suite = Suite { only, results: Vec::new() };

    suite.run(1, "receptive-field agreement", secs(30), rf_agreement);
    suite.run(2, "complex convolution oracle", secs(10), complex_conv_oracle);
    suite.run(3, "gradient suite", secs(300), gradient_suite);
    suite.run(4, "data-consistency exactness", secs(30), data_consistency);
    suite.run(5, "transform correctness", secs(10), transforms);
    suite.run(6, "mask statistics", None, mask_statistics);

    let needs_base = [7, 8, 10].iter().any(|i| suite.wants(*i));
    let mut base: Option<Trained> = None;
    suite.run(7, "desk-scale learning", secs(900), || {
        let t = train_protocol("tiny", Mode::Real, PhaseMode::None, 0);
        let r = t.floor();
        base = Some(t);
        r
    });
    if needs_base && base.is_none() {
        base = Some(train_protocol("tiny", Mode::Real, PhaseMode::None, 0));
    }

    suite.run(8, "ablation direction", None, || {
        let mut deltas = Vec::new();
        for root in 0..3u64 {
            let dilated = match (root, &base) {
                (0, Some(b)) => b.psnr(),
                _ => train_protocol("tiny", Mode::Real, PhaseMode::None, root).psnr(),
            };
            let flat = train_protocol("tiny-ablation", Mode::Real, PhaseMode::None, root).psnr();
            deltas.push(dilated - flat);
        }
        let shown: Vec<String> = deltas.iter().map(|d| format!("{d:+.3}")).collect();
        (
            deltas.iter().all(|d| *d >= 0.0),
            format!("dilated minus all-dilation-1 test psnr per seed: {} dB", shown.join(", ")),
        )
    });

    suite.run(9, "complex/real parity", None, || {
        let spec = NetworkSpec::preset("tiny").unwrap().with_mode(Mode::Complex);
        let complex = parameter_breakdown(&CascadeModel::new(&spec, 0).unwrap());
        let twin = parameter_breakdown(&CascadeModel::new(&spec.real_twin(), 0).unwrap());
        let parity = complex.filters() == 2 * twin.filters();
        let c = train_protocol("tiny", Mode::Complex, PhaseMode::Smooth, 0);
        let r = train_protocol("tiny", Mode::Real, PhaseMode::Smooth, 0);
        let (c_ok, c_note) = c.floor();
        let (r_ok, r_note) = r.floor();
        let phase = |t: &Trained| {
            let s = &t.run.test.as_ref().unwrap().summary;
            format!(
                "{:.4} (zero-filled {:.4})",
                s.mean_phase_rmse.unwrap_or(f64::NAN),
                s.mean_zero_filled_phase_rmse.unwrap_or(f64::NAN)
            )
        };
        (
            parity && c_ok && r_ok,
            format!(
                "conv filters {} = 2 x {} ({}); totals {} vs {} (norm {} vs {}); smooth phase: complex {c_note}; real {r_note}; phase RMSE complex {}, real {}",
                complex.filters(),
                twin.filters(),
                if parity { "exact" } else { "MISMATCH" },
                complex.total,
                twin.total,
                complex.norm,
                twin.norm,
                phase(&c),
                phase(&r)
            ),
        )
    });

    suite.run(10, "reproducibility", None, || {
        let b = base.as_ref().expect("trained above");
        let src = b.dir.path();
        let again = TempDir::new().unwrap();
        let train_report = run::replay(src, again.path(), "replay").unwrap();

        let eval_dir = TempDir::new().unwrap();
        let original = RunManifest::load(src).unwrap();
        let m = RunManifest::eval(
            eval_dir.path(),
            original.spec,
            &b.run.checkpoint,
            SplitName::Test,
            4,
            original.masks,
            original.phantoms,
            original.seeds,
        );
        m.write().unwrap();
        run::run_eval(&m, eval_dir.path()).unwrap();
        let eval_again = TempDir::new().unwrap();
        let eval_report = run::replay(eval_dir.path(), eval_again.path(), "replay").unwrap();

        let all: Vec<_> = train_report.iter().chain(&eval_report).collect();
        let differing: Vec<String> = all.iter().filter(|(_, same)| !same).map(|(n, _)| n.display().to_string()).collect();
        (
            differing.is_empty() && train_report.len() >= 2,
            format!(
                "training run: {} artifacts, evaluation run: {} artifacts replayed from their manifests; {}",
                train_report.len(),
                eval_report.len(),
                if differing.is_empty() { "all byte-identical".into() } else { format!("differing: {differing:?}") }
            ),
        )
    });

    let failed: Vec<usize> = suite.results.iter().filter(|r| !r.2).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed{}",
        suite.results.len() - failed.len(),
        suite.results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
