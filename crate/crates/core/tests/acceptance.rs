//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion outside [`KNOWN_FAILURES`] fails. The training
//! criteria take several minutes on a single core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{
    band_mean_psnr, depthwise_oracle, gradcheck, held_out_psnr, max_rel_err, median, nearest_observed_fill,
    pointwise_oracle, random_tensor,
};
use hsi_restore::degrade::{add_gaussian, apply_mask, random_line_deficits, random_mask, synth_lowrank_cube, DegradeSpec};
use hsi_restore::metrics::{adjacent_diff_histogram, mode_singular_values, psnr, Direction};
use hsi_restore::nn::{Architecture, DepthwiseLayer, PointwiseLayer, SeparableCnn};
use hsi_restore::noise::estimate_sigma;
use hsi_restore::optim::{AdamConfig, LrSchedule, ModelAdam};
use hsi_restore::pipelines::{
    train_gaussian, train_holefill, train_mixed, GaussianTaskConfig, HolefillTaskConfig, MixedTaskConfig,
};
use hsi_restore::rng::Rng;

// 1. Fast layer paths against nested loops.
const ORACLE_CASES: usize = 200;
const ORACLE_TOL: f64 = 1e-12;
// 3. Analytic PSNR of additive noise.
const PSNR_TOL_DB: f64 = 0.2;
const PSNR_MIN_VOXELS: usize = 100_000;
// 4. Gaussian denoising gain over the noisy input.
const GAUSSIAN_GAIN_DB: f64 = 6.0;
// 5. Mixed removal gain over the degraded input (and must beat Gaussian-only).
const MIXED_GAIN_DB: f64 = 6.0;
const MIXED_LAMBDA: f64 = 3.0;
// 6. Hole-fill margin over nearest-observed-neighbour fill on held-out voxels.
const HOLEFILL_MARGIN_DB: f64 = 2.0;
// 7. Noise estimator relative error.
const SIGMA_REL_TOL: f64 = 0.15;
// 8. Mode-3 tail below this fraction of the leading singular value.
const RANK_TAIL_TOL: f64 = 1e-6;

/// Criteria that fail on this implementation and are still reported as FAIL.
/// 8: the diagonal histogram ordering holds on only about 60% of smooth
/// synthetic cubes; the spectral (z) zero bin is often the smaller one.
const KNOWN_FAILURES: &[usize] = &[8];

const SEEDS: [u64; 3] = [1, 2, 3];
/// Desk-scale network used by every training criterion.
const HIDDEN: usize = 64;

fn criterion(id: u32, title: &str, f: impl FnOnce() -> (bool, String)) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id}: {verdict}: {title}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    pass
}

fn fmt_db(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

fn net(bands: usize, seed: u64) -> SeparableCnn<f32> {
    let arch = Architecture { bands, hidden: HIDDEN, blocks: 4, kernel: 3, multiplier: 1 };
    SeparableCnn::init(&arch, &mut Rng::new(seed)).unwrap()
}

fn c1_oracles() -> (bool, String) {
    let mut rng = Rng::new(99);
    let mut worst: f64 = 0.0;
    for _ in 0..ORACLE_CASES {
        let dims = (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(6));
        let (k, mult, l) = ([1, 3, 5][rng.below(3)], 1 + rng.below(3), 1 + rng.below(6));
        let x = random_tensor(dims, &mut rng);
        let dw = DepthwiseLayer::new(k, mult, dims.3, (0..k * k * dims.3 * mult).map(|_| rng.gaussian()).collect()).unwrap();
        let d = depthwise_oracle(&x, &dw);
        worst = worst.max(max_rel_err(dw.apply(&x).unwrap().data(), d.data()));
        let c = dims.3 * mult;
        let pw = PointwiseLayer::new(c, l, (0..c * l).map(|_| rng.gaussian()).collect(), (0..l).map(|_| rng.gaussian()).collect())
            .unwrap();
        worst = worst.max(max_rel_err(pw.apply(&d).unwrap().data(), pointwise_oracle(&d, &pw).data()));
    }
    (worst <= ORACLE_TOL, format!("{ORACLE_CASES} cases, worst relative error {worst:.2e} (tol {ORACLE_TOL:e})"))
}

fn c2_gradients() -> (bool, String) {
    let mut checks = Vec::new();
    for f in [
        gradcheck::depthwise_gradients,
        gradcheck::pointwise_gradients,
        gradcheck::relu_gradient_away_from_kink,
        gradcheck::batchnorm_gradients_in_inference_mode,
        gradcheck::masked_loss_gradient,
        gradcheck::batchnorm_gradients_in_training_mode,
        gradcheck::four_block_model_end_to_end,
        gradcheck::four_block_model_inference_mode,
        gradcheck::mixed_loss_through_l1_term,
    ] {
        checks.extend(f());
    }
    let worst = |tol: f64| checks.iter().filter(|c| c.tol == tol).map(|c| c.error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    (
        failed.is_empty(),
        format!(
            "{} gradient tensors; worst per-layer {:.2e} (tol {:e}); worst end-to-end/batchnorm/l1 {:.2e} (tol {:e}){}",
            checks.len(),
            worst(gradcheck::LAYER_TOL),
            gradcheck::LAYER_TOL,
            worst(gradcheck::END_TO_END_TOL),
            gradcheck::END_TO_END_TOL,
            if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
        ),
    )
}

fn c3_psnr_identity() -> (bool, String) {
    let clean = synth_lowrank_cube(64, 64, 32, 4, 2.0, &mut Rng::new(5)).unwrap();
    assert!(clean.len() >= PSNR_MIN_VOXELS);
    let mut out = Vec::new();
    let mut pass = true;
    for (sigma, expected) in [(0.1, 20.0), (0.05, 20.0 * 2f64.log10() + 20.0)] {
        let noisy = add_gaussian(&clean, sigma, &mut Rng::new(6)).unwrap();
        let got = psnr(&clean, &noisy, 1.0).unwrap().mean;
        let independent = band_mean_psnr(&clean, &noisy);
        pass &= (got - expected).abs() <= PSNR_TOL_DB && (got - independent).abs() < 1e-9;
        out.push(format!("sigma {sigma}: {got:.3} dB (expect {expected:.2} +/- {PSNR_TOL_DB})"));
    }
    (pass, format!("{} voxels; {}", clean.len(), out.join("; ")))
}

fn c4_gaussian() -> (bool, String) {
    let (mut noisy_db, mut restored_db, mut gains) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let clean = synth_lowrank_cube(64, 64, 16, 4, 2.0, &mut Rng::new(seed)).unwrap();
        let noisy = add_gaussian(&clean, 0.1, &mut Rng::new(seed + 100)).unwrap();
        let mut model = net(16, seed + 200);
        let mut opt = ModelAdam::new(&model, AdamConfig::default());
        let cfg = GaussianTaskConfig::default();
        let schedule = LrSchedule { initial_lr: 0.01, halve_every: 100, floor: 1e-5 };
        let out = train_gaussian(&noisy, &cfg, &mut model, &mut opt, &schedule, &mut Rng::new(seed + 300), &mut |_| {}).unwrap();
        let before = psnr(&clean, &noisy, 1.0).unwrap().mean;
        let after = psnr(&clean, &out.restored, 1.0).unwrap().mean;
        noisy_db.push(before);
        restored_db.push(after);
        gains.push(after - before);
    }
    let gain = median(gains);
    (
        gain >= GAUSSIAN_GAIN_DB,
        format!(
            "noisy {} dB -> restored {} dB; median gain {gain:.2} dB (need >= {GAUSSIAN_GAIN_DB})",
            fmt_db(&noisy_db),
            fmt_db(&restored_db)
        ),
    )
}

fn c5_mixed() -> (bool, String) {
    let (mut degraded_db, mut mixed_db, mut gauss_db) = (Vec::new(), Vec::new(), Vec::new());
    let epochs = MixedTaskConfig::default().epochs;
    let schedule = LrSchedule { initial_lr: 0.01, halve_every: 200, floor: 1e-5 };
    for seed in SEEDS {
        let clean = synth_lowrank_cube(64, 64, 16, 4, 2.0, &mut Rng::new(seed)).unwrap();
        let lines = random_line_deficits(clean.dims(), 0.1, 1, &mut Rng::new(seed + 50)).unwrap();
        assert_eq!(lines.len(), 2);
        let spec = DegradeSpec { gaussian_sigma: 0.1, impulse_density: 0.1, line_deficits: lines, seed: seed + 100, ..Default::default() };
        let (y, _) = spec.apply(&clean).unwrap();
        degraded_db.push(psnr(&clean, &y, 1.0).unwrap().mean);

        let mut phi1 = net(16, seed + 200);
        let mut phi2 = net(16, seed + 201);
        let mut o1 = ModelAdam::new(&phi1, AdamConfig::default());
        let mut o2 = ModelAdam::new(&phi2, AdamConfig::default());
        let cfg = MixedTaskConfig { lambda: MIXED_LAMBDA, ..Default::default() };
        let out = train_mixed(&y, &cfg, &mut phi1, &mut phi2, &mut o1, &mut o2, &schedule, &mut Rng::new(seed + 300), &mut |_| {})
            .unwrap();
        mixed_db.push(psnr(&clean, &out.restored, 1.0).unwrap().mean);

        let mut model = net(16, seed + 200);
        let mut opt = ModelAdam::new(&model, AdamConfig::default());
        let gcfg = GaussianTaskConfig { epochs, ..Default::default() };
        let g = train_gaussian(&y, &gcfg, &mut model, &mut opt, &schedule, &mut Rng::new(seed + 300), &mut |_| {}).unwrap();
        gauss_db.push(psnr(&clean, &g.restored, 1.0).unwrap().mean);
    }
    let (d, m, g) = (median(degraded_db.clone()), median(mixed_db.clone()), median(gauss_db.clone()));
    (
        m - d >= MIXED_GAIN_DB && m > g,
        format!(
            "degraded {} dB, mixed (lambda {MIXED_LAMBDA}) {} dB, Gaussian-only {} dB; median gain {:.2} dB (need >= {MIXED_GAIN_DB}), median margin over Gaussian-only {:.2} dB (need > 0)",
            fmt_db(&degraded_db),
            fmt_db(&mixed_db),
            fmt_db(&gauss_db),
            m - d,
            m - g
        ),
    )
}

fn c6_holefill() -> (bool, String) {
    let (mut nn_db, mut net_db, mut margins) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let clean = synth_lowrank_cube(64, 64, 16, 4, 1.0, &mut Rng::new(seed)).unwrap();
        let mask = random_mask(clean.dims(), 0.5, &mut Rng::new(seed + 100)).unwrap();
        let y = apply_mask(&clean, &mask).unwrap();
        let baseline = held_out_psnr(&clean, &nearest_observed_fill(&y, &mask), &mask);

        let mut model = net(16, seed + 200);
        let mut opt = ModelAdam::new(&model, AdamConfig::default());
        let cfg = HolefillTaskConfig { stride: 10, ..Default::default() };
        let schedule = LrSchedule { initial_lr: 0.01, halve_every: 300, floor: 1e-5 };
        let out = train_holefill(&y, &mask, &cfg, &mut model, &mut opt, &schedule, &mut Rng::new(seed + 300), &mut |_| {}).unwrap();
        let filled = held_out_psnr(&clean, &out.restored, &mask);
        nn_db.push(baseline);
        net_db.push(filled);
        margins.push(filled - baseline);
    }
    let margin = median(margins);
    (
        margin >= HOLEFILL_MARGIN_DB,
        format!(
            "held-out PSNR: nearest-neighbour {} dB, network {} dB; median margin {margin:.2} dB (need >= {HOLEFILL_MARGIN_DB})",
            fmt_db(&nn_db),
            fmt_db(&net_db)
        ),
    )
}

fn c7_noise_estimator() -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut out = Vec::new();
    for sigma in [0.05, 0.1, 0.2] {
        let mut errs = Vec::new();
        for seed in SEEDS {
            let clean = synth_lowrank_cube(64, 64, 16, 4, 2.0, &mut Rng::new(seed)).unwrap();
            let noisy = add_gaussian(&clean, sigma, &mut Rng::new(seed + 100)).unwrap();
            let est = estimate_sigma(&noisy).unwrap().sigma;
            errs.push((est - sigma).abs() / sigma);
        }
        let e = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(e);
        out.push(format!("sigma {sigma}: max rel err {:.1}%", 100.0 * e));
    }
    (worst <= SIGMA_REL_TOL, format!("{} over 3 cubes each (tol {:.0}%)", out.join(", "), 100.0 * SIGMA_REL_TOL))
}

fn c8_low_rank() -> (bool, String) {
    let mut tail_ratio: f64 = 0.0;
    let mut diag_ok = true;
    let mut masses = Vec::new();
    for seed in SEEDS {
        let rank = 4;
        let cube = synth_lowrank_cube(64, 64, 31, rank, 2.0, &mut Rng::new(seed + 10)).unwrap();
        let s = mode_singular_values(&cube, 3).unwrap().values;
        tail_ratio = tail_ratio.max(s[rank..].iter().copied().fold(0.0, f64::max) / s[0]);
        let mass = |d| adjacent_diff_histogram(&cube, d, 201).unwrap().zero_bin_mass;
        let diag = mass(Direction::DiagYz);
        let axes = [Direction::X, Direction::Y, Direction::Z].map(mass);
        diag_ok &= axes.iter().all(|&m| diag < m);
        masses.push(format!("diag {diag:.3} vs x/y/z {:.3}/{:.3}/{:.3}", axes[0], axes[1], axes[2]));
    }
    (
        tail_ratio < RANK_TAIL_TOL && diag_ok,
        format!(
            "rank-4 mode-3 tail/sigma1 max {tail_ratio:.2e} (tol {RANK_TAIL_TOL:e}); zero-bin mass {}",
            masses.join("; ")
        ),
    )
}

fn c9_determinism() -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_hsi-restore");
    let session = |dir: &Path, threads: &str| {
        let run = |args: &[&str]| {
            let out = Command::new(bin).args(args).args(["--threads", threads]).current_dir(dir).output().unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        };
        run(&["synth", "--h", "32", "--w", "32", "--b", "8", "--seed", "4", "-o", "clean.hsc"]);
        run(&["simulate", "-i", "clean.hsc", "-o", "noisy.hsc", "--sigma", "0.1", "--impulse-density", "0.05", "--seed", "5"]);
        run(&["simulate", "-i", "clean.hsc", "-o", "masked.hsc", "--mask-rate", "0.5", "--seed", "6"]);
        let small = ["--hidden", "8", "--blocks", "3", "--epochs", "4", "--batch", "4", "--patch", "16", "--stride", "8"];
        run(&[&["denoise", "-i", "noisy.hsc", "-o", "den.hsc", "--refresh-every", "2"][..], &small].concat());
        run(&[&["mixed", "-i", "noisy.hsc", "-o", "mix.hsc"][..], &small].concat());
        run(&[&["holefill", "-i", "masked.hsc", "--mask", "masked.mask.hsc", "-o", "fill.hsc"][..], &small].concat());
        run(&["analyze", "-i", "den.hsc", "--psnr", "--ref", "clean.hsc", "--sigma", "--svd", "--hist", "-o", "report.csv"]);
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let mut compared = 0;
    let mut diffs = Vec::new();
    for threads in ["1", "2"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (fa, fb) = (session(a.path(), threads), session(b.path(), threads));
        if fa.len() != fb.len() {
            diffs.push(format!("threads {threads}: file sets differ"));
        }
        for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
            compared += 1;
            if na != nb || da != db {
                diffs.push(format!("threads {threads}: {na}"));
            }
        }
    }
    (
        diffs.is_empty() && compared > 0,
        format!("{compared} artifacts compared across repeated CLI sessions at --threads 1 and 2; mismatches: {diffs:?}"),
    )
}

fn main() {
    let results = [
        criterion(1, "depthwise/pointwise match nested-loop oracles", c1_oracles),
        criterion(2, "gradients match central finite differences", c2_gradients),
        criterion(3, "additive Gaussian noise gives the analytic PSNR", c3_psnr_identity),
        criterion(4, "Gaussian self-supervised denoising gain", c4_gaussian),
        criterion(5, "mixed-anomaly removal gain and margin over Gaussian-only", c5_mixed),
        criterion(6, "hole-filling beats nearest-observed-neighbour fill", c6_holefill),
        criterion(7, "blind noise estimator accuracy", c7_noise_estimator),
        criterion(8, "low-rank spectrum tail and diagonal histogram ordering", c8_low_rank),
        criterion(9, "repeated CLI runs are byte-identical", c9_determinism),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    let unexpected: Vec<usize> = failed.iter().copied().filter(|c| !KNOWN_FAILURES.contains(c)).collect();
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:?}");
    for c in KNOWN_FAILURES.iter().filter(|c| !failed.contains(c)) {
        println!("acceptance: criterion {c} is listed as a known failure but passed");
    }
}
