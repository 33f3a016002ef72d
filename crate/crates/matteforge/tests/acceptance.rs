//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; a FAIL line is always accompanied by a panic with the
//! offending assertion.

mod common;

use common::{checks, disc_alpha, rng, write_toy_corpus};
use matteforge::engine::ops::{add, sum, tanh, NormMode};
use matteforge::engine::Tensor;
use matteforge::imaging::{
    composite, load_image, recover_alpha, save_image_png, AlphaMatte, Image,
};
use matteforge::model::{
    crop_matte, pad_image_to_stride, pad_trimap_to_stride, FfuSource, MattingModel, ModelConfig,
};
use matteforge::pipeline::{ablate, train, AblateConfig, TrainConfig};
use matteforge::trimap::{
    gen_sp_trimap, grow_unknown, one_hot, perturb_for_tcp, trimap_from_alpha, Label, TrimapGenConfig,
    TrimapPair,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn criterion(n: u32, desc: &str, f: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(f));
    let verdict = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("criterion {n} ({desc}): {verdict}");
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    criterion(1, "per-op and composite-model gradient checks", || {
        let start = Instant::now();
        checks::op_gradchecks(1e-5, 1e-4);
        checks::loss_gradchecks(1e-6, 1e-4);

        // full width-4 model, double precision, subsampled elements per
        // parameter; the head sums tanh of the fused logits so the check
        // stays clear of the clamp kinks (the clamp subgradient is covered
        // by the per-op check)
        let cfg = ModelConfig {
            base_width: 4,
            encoder_blocks: [1, 1, 1, 1],
            tcp_width: 4,
            tcp_enabled: true,
            ffu_source: FfuSource::Stem,
        };
        let model: MattingModel<f64> = MattingModel::new(cfg, 11).unwrap();
        let mut r = rng(12);
        let n = 6 * 64 * 64;
        let x_sp = Tensor::constant(
            vec![1, 6, 64, 64],
            (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
        );
        let x_tcp = Tensor::constant(
            vec![1, 6, 64, 64],
            (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
        );
        let head = || {
            let trace = model.forward(&x_sp, &x_tcp, NormMode::Train).unwrap();
            let fused = add(&trace.sp_logits, trace.tcp_logits.as_ref().unwrap()).unwrap();
            sum(&tanh(&fused))
        };
        let params: Vec<(&str, Tensor<f64>)> = model
            .trainable_params()
            .iter()
            .map(|(name, t)| (name.as_str(), t.clone()))
            .collect();
        // h is small to keep the finite-difference interval clear of
        // relu/max-pool kinks; f64 roundoff is still negligible at this h
        common::check_grads("composite model", &head, &params, 1e-7, 1e-3, 2);

        let elapsed = start.elapsed();
        assert!(
            elapsed.as_secs_f64() < 120.0,
            "gradient suite took {elapsed:?}, budget is 2 min"
        );
    });
}

#[test]
fn criterion_2_loss_oracles() {
    criterion(2, "loss brute-force references", || {
        checks::loss_brute_force_cases(100);
        checks::loss_floor_check();
    });
}

#[test]
fn criterion_3_metric_oracles() {
    criterion(3, "metric references", || {
        checks::sad_mse_loop_cases(30);
        checks::gradient_error_direct_cases(5);
        checks::connectivity_oracle_cases(50);
        checks::metrics_zero_on_identical();
    });
}

// ---------------------------------------------------------------------------

/// 1000 pixels whose foreground/background differ by at least `dmin` in
/// every channel.
fn contrast_triplet(seed: u64, h: usize, w: usize, dmin: f32) -> (Image, Image, AlphaMatte) {
    let mut r = rng(seed);
    let mut fg = Image::new(h, w);
    let mut bg = Image::new(h, w);
    let mut alpha = AlphaMatte::new(h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let f: f32 = r.gen_range(0.0..1.0);
                let headroom = f.max(1.0 - f);
                let d = r.gen_range(dmin..headroom.max(dmin + 1e-3));
                let b = if f - d >= 0.0 { f - d } else { f + d };
                fg.set(y, x, c, f);
                bg.set(y, x, c, b);
            }
            alpha.set(y, x, r.gen_range(0.0..1.0));
        }
    }
    (fg, bg, alpha)
}

#[test]
fn criterion_4_compositing_round_trip() {
    criterion(4, "compositing round trip", || {
        // float path: 25 x 40 = 1000 random pixels at the 0.1 contrast floor
        let (fg, bg, alpha) = contrast_triplet(401, 25, 40, 0.1);
        let comp = composite(&fg, &bg, &alpha).unwrap();
        let rec = recover_alpha(&comp, &fg, &bg).unwrap();
        assert!(rec.defined.iter().all(|&d| d));
        let mut max_err = 0.0f64;
        for i in 0..1000 {
            let e = (rec.alpha.data()[i] as f64 - alpha.data()[i] as f64).abs();
            max_err = max_err.max(e);
        }
        assert!(max_err < 1e-6, "float round trip error {max_err:.3e}");

        // 8-bit path: fg, bg and the composite all pass through PNG files.
        // Quantization noise in all three images is amplified by the inverse
        // contrast, so this set uses a 0.4 per-channel floor to keep the
        // worst-case recovery error below the 2/255 budget.
        let (fg, bg, alpha) = contrast_triplet(402, 25, 40, 0.4);
        let comp = composite(&fg, &bg, &alpha).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, img) in [("fg", &fg), ("bg", &bg), ("comp", &comp)] {
            save_image_png(&dir.path().join(format!("{name}.png")), img).unwrap();
        }
        let fg8 = load_image(&dir.path().join("fg.png")).unwrap();
        let bg8 = load_image(&dir.path().join("bg.png")).unwrap();
        let comp8 = load_image(&dir.path().join("comp.png")).unwrap();
        let rec8 = recover_alpha(&comp8, &fg8, &bg8).unwrap();
        let mut max_err8 = 0.0f64;
        for i in 0..1000 {
            if rec8.defined[i] {
                let e = (rec8.alpha.data()[i] as f64 - alpha.data()[i] as f64).abs();
                max_err8 = max_err8.max(e);
            }
        }
        assert!(
            max_err8 < 2.0 / 255.0,
            "8-bit round trip error {max_err8:.4}"
        );
    });
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_5_trimap_properties() {
    criterion(5, "trimap generation properties", || {
        let cfg = TrimapGenConfig::default();
        for seed in 0..1000u64 {
            let alpha = disc_alpha(40, 40, (seed % 7) as usize);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let sp = gen_sp_trimap(&alpha, &cfg, &mut r);
            for (i, &l) in sp.labels().iter().enumerate() {
                match l {
                    Label::Foreground => assert_eq!(alpha.data()[i], 1.0, "seed {seed} px {i}"),
                    Label::Background => assert_eq!(alpha.data()[i], 0.0, "seed {seed} px {i}"),
                    Label::Unknown => {}
                }
            }
            // determinism under a fixed seed
            let again = gen_sp_trimap(&alpha, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(sp, again, "seed {seed} not deterministic");
        }

        // grow_unknown monotone in the kernel size
        let base = trimap_from_alpha(&disc_alpha(40, 40, 0));
        let mut prev = base.count(Label::Unknown);
        for k in 1..=10 {
            let g = grow_unknown(&base, k).unwrap();
            for (a, b) in base.labels().iter().zip(g.labels()) {
                if *a == Label::Unknown {
                    assert_eq!(*b, Label::Unknown);
                }
            }
            let u = g.count(Label::Unknown);
            assert!(u >= prev, "k {k}");
            prev = u;
        }

        // one-hot planes sum to exactly 1 at every pixel
        let oh = one_hot::<f64>(&base);
        let (h, w) = (base.height, base.width);
        for i in 0..h * w {
            let s: f64 = (0..3).map(|c| oh.data()[c * h * w + i]).sum();
            assert_eq!(s, 1.0);
        }

        // n = 0 perturbation steps is the identity for any seed
        let frozen = TrimapGenConfig {
            steps_max: 0,
            ..TrimapGenConfig::default()
        };
        for seed in 0..50u64 {
            let out = perturb_for_tcp(&base, &frozen, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(out, base, "seed {seed}");
        }
    });
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_6_architecture_invariants() {
    criterion(6, "architecture invariants", || {
        let cfg = ModelConfig {
            base_width: 4,
            encoder_blocks: [1, 1, 1, 1],
            tcp_width: 4,
            tcp_enabled: true,
            ffu_source: FfuSource::Stem,
        };
        let model: MattingModel<f32> = MattingModel::new(cfg.clone(), 3).unwrap();

        // every TCP activation stays at the network input size
        for size in [33usize, 48, 64, 80, 97] {
            let img = common::textured_image(size, size, 1);
            let tri = trimap_from_alpha(&disc_alpha(size, size, 0));
            let (padded, info) = pad_image_to_stride(&img);
            let ptri = pad_trimap_to_stride(&tri);
            let pair = TrimapPair {
                sp: ptri.clone(),
                tcp: ptri,
            };
            let trace = model.forward_single(&padded, &pair, NormMode::Eval).unwrap();
            assert!(!trace.tcp_activation_sizes.is_empty());
            for &(ah, aw) in &trace.tcp_activation_sizes {
                assert_eq!((ah, aw), (info.padded_h, info.padded_w), "input {size}");
            }
        }

        // with w_c = 0 the textural path ignores the shallow features: a
        // semantic-path perturbation changes the shallow activation but not
        // the TCP logits
        assert_eq!(model.ffu_weight().unwrap().data()[0], 0.0);
        let img = common::textured_image(64, 64, 2);
        let tri = trimap_from_alpha(&disc_alpha(64, 64, 1));
        let pair = TrimapPair {
            sp: tri.clone(),
            tcp: tri.clone(),
        };
        let before = model.forward_single(&img, &pair, NormMode::Eval).unwrap();
        let stem_w = model
            .trainable_params()
            .iter()
            .find(|(n, _)| n == "sp/stem/conv/w")
            .map(|(_, t)| t.clone())
            .unwrap();
        for v in stem_w.data_mut().iter_mut().take(8) {
            *v += 0.5;
        }
        let after = model.forward_single(&img, &pair, NormMode::Eval).unwrap();
        assert_ne!(*before.shallow.data(), *after.shallow.data());
        assert_eq!(
            *before.tcp_logits.as_ref().unwrap().data(),
            *after.tcp_logits.as_ref().unwrap().data()
        );

        // zeroing the TCP output head reproduces the baseline bit for bit
        // (both models draw identical semantic-path initializations)
        let full: MattingModel<f32> = MattingModel::new(cfg.clone(), 9).unwrap();
        for (name, t) in full.trainable_params() {
            if name == "tcp/out/w" || name == "tcp/out/b" {
                for v in t.data_mut().iter_mut() {
                    *v = 0.0;
                }
            }
        }
        let baseline: MattingModel<f32> = MattingModel::new(
            ModelConfig {
                tcp_enabled: false,
                ..cfg
            },
            9,
        )
        .unwrap();
        let t_full = full.forward_single(&img, &pair, NormMode::Eval).unwrap();
        let t_base = baseline.forward_single(&img, &pair, NormMode::Eval).unwrap();
        assert_eq!(*t_full.alpha_pred.data(), *t_base.alpha_pred.data());

        // padding and cropping restore arbitrary sizes
        for (h, w) in [(1, 1), (5, 3), (31, 33), (64, 50), (97, 97)] {
            let img = common::textured_image(h, w, 0);
            let (padded, info) = pad_image_to_stride(&img);
            assert_eq!(info.padded_h % 32, 0);
            assert_eq!(info.padded_w % 32, 0);
            assert_eq!((padded.height, padded.width), (info.padded_h, info.padded_w));
            let m = AlphaMatte::from_fn(info.padded_h, info.padded_w, |y, x| {
                ((y * 31 + x * 7) % 13) as f32 / 13.0
            });
            let cropped = crop_matte(&m, info);
            assert_eq!((cropped.height, cropped.width), (h, w));
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(cropped.get(y, x), m.get(y, x));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------

fn desk_train_config(root: &Path, out: &Path) -> TrainConfig {
    TrainConfig {
        total_steps: 500,
        warmup_steps: 50,
        batch_size: 4,
        base_lr: 2e-3,
        seed: 7,
        checkpoint_every: 0,
        crop_sizes: vec![64],
        crop_out: 64,
        fg_dir: root.join("fg"),
        alpha_dir: root.join("alpha"),
        bg_dir: root.join("bg"),
        out_dir: out.to_path_buf(),
        model: ModelConfig {
            base_width: 8,
            encoder_blocks: [1, 1, 1, 1],
            tcp_width: 8,
            tcp_enabled: true,
            ffu_source: FfuSource::Stem,
        },
        trimap: TrimapGenConfig {
            base_kernel_max: 8,
            dilation_kernel_max: 8,
            erosion_kernel_max: 4,
            ..TrimapGenConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn read_log_series(log_path: &Path) -> (Vec<f64>, Vec<f64>) {
    let text = std::fs::read_to_string(log_path).unwrap();
    let mut loss = Vec::new();
    let mut loss_a = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        loss.push(v["loss"].as_f64().unwrap());
        loss_a.push(v["loss_a"].as_f64().unwrap());
    }
    (loss, loss_a)
}

#[test]
fn criterion_7_desk_scale_convergence() {
    criterion(7, "desk-scale overfit", || {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(dir.path(), 8, 64);
        let cfg = desk_train_config(dir.path(), &dir.path().join("out"));
        let outcome = train(&cfg).unwrap();
        let (loss, loss_a) = read_log_series(&outcome.log_path);
        assert_eq!(loss.len(), 500);

        assert!(
            outcome.final_loss_a < 0.05,
            "final L_a {:.4} (total {:.4})",
            outcome.final_loss_a,
            outcome.final_loss
        );
        let _ = loss_a;

        // 50-step window means must decrease monotonically
        let windows: Vec<f64> = loss
            .chunks(50)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for pair in windows.windows(2) {
            assert!(
                pair[1] < pair[0],
                "loss windows not decreasing: {windows:?}"
            );
        }

        let elapsed = start.elapsed();
        assert!(
            elapsed.as_secs_f64() < 600.0,
            "overfit took {elapsed:?}, budget is 10 min"
        );
    });
}

#[test]
fn criterion_8_ablation_harness() {
    criterion(8, "ablation directional check", || {
        let dir = tempfile::tempdir().unwrap();
        write_toy_corpus(dir.path(), 5, 64);
        let mut train_cfg = desk_train_config(dir.path(), &dir.path().join("ablate"));
        train_cfg.total_steps = 200;
        train_cfg.warmup_steps = 20;
        train_cfg.crop_sizes = vec![48];
        train_cfg.crop_out = 32;
        let cfg = AblateConfig {
            train: train_cfg,
            eval_per_fg: 4, // 5 foregrounds x 4 backgrounds = 20 samples
            ..AblateConfig::default()
        };
        let report = ablate(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        let sad_of = |name: &str| {
            report
                .rows
                .iter()
                .find(|r| r.name == name)
                .unwrap_or_else(|| panic!("missing variant {name}"))
                .mean_sad
        };
        let baseline = sad_of("baseline");
        let tcp = sad_of("baseline+TCP");
        assert!(
            tcp <= baseline,
            "+TCP SAD {tcp:.4} exceeds baseline SAD {baseline:.4}"
        );
    });
}

// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_matteforge"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "matteforge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// synth -> train -> infer -> eval via the real binary; returns the bytes of
/// the artifacts compared across reruns.
fn cli_pipeline(corpus: &Path, work: &Path, cfg_path: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |s: &Path| s.to_str().unwrap().to_string();
    let set = work.join("set");
    run_cli(&[
        "--seed", "11", "--deterministic", "synth",
        "--fg-dir", &p(&corpus.join("fg")),
        "--alpha-dir", &p(&corpus.join("alpha")),
        "--bg-dir", &p(&corpus.join("bg")),
        "--out-dir", &p(&set),
        "--per-fg", "1",
    ]);
    run_cli(&[
        "--config", &p(cfg_path), "--deterministic", "train",
        "--fg-dir", &p(&corpus.join("fg")),
        "--alpha-dir", &p(&corpus.join("alpha")),
        "--bg-dir", &p(&corpus.join("bg")),
        "--out-dir", &p(&work.join("train")),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(set.join("manifest.json")).unwrap()).unwrap();
    let pred = work.join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for sample in manifest["samples"].as_array().unwrap() {
        let id = sample["id"].as_str().unwrap();
        run_cli(&[
            "--deterministic", "infer",
            "--checkpoint", &p(&work.join("train/model.mfck")),
            // manifest paths are relative to the synth output directory
            "--image", &p(&set.join(sample["comp"].as_str().unwrap())),
            "--trimap", &p(&set.join(sample["trimap_sp"].as_str().unwrap())),
            "--output", &p(&pred.join(format!("{id}.png"))),
        ]);
    }
    run_cli(&[
        "--deterministic", "eval",
        "--pred-dir", &p(&pred),
        "--gt-dir", &p(&set.join("alpha")),
        "--trimap-dir", &p(&set.join("trimap_sp")),
        "--out-dir", &p(&work.join("eval")),
    ]);

    let mut artifacts = Vec::new();
    for rel in ["set/manifest.json", "train/model.mfck", "eval/report.json"] {
        artifacts.push((rel.to_string(), std::fs::read(work.join(rel)).unwrap()));
    }
    let mut preds: Vec<_> = std::fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    preds.sort();
    for path in preds {
        let name = format!("pred/{}", path.file_name().unwrap().to_str().unwrap());
        artifacts.push((name, std::fs::read(path).unwrap()));
    }
    artifacts
}

#[test]
fn criterion_9_cli_end_to_end() {
    criterion(9, "CLI end-to-end determinism", || {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        write_toy_corpus(&corpus, 5, 64);

        let cfg = TrainConfig {
            total_steps: 10,
            warmup_steps: 2,
            batch_size: 2,
            seed: 5,
            crop_sizes: vec![48],
            crop_out: 32,
            model: ModelConfig {
                base_width: 4,
                encoder_blocks: [1, 1, 1, 1],
                tcp_width: 4,
                tcp_enabled: true,
                ffu_source: FfuSource::Stem,
            },
            ..TrainConfig::default()
        };
        let cfg_path = dir.path().join("train.json");
        std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();

        let first = cli_pipeline(&corpus, &dir.path().join("a"), &cfg_path);
        let second = cli_pipeline(&corpus, &dir.path().join("b"), &cfg_path);

        // the evaluation report must be well-formed
        let report: serde_json::Value = serde_json::from_slice(
            &first.iter().find(|(n, _)| n == "eval/report.json").unwrap().1,
        )
        .unwrap();
        assert_eq!(report["samples"].as_array().unwrap().len(), 5);
        assert!(report["mean_sad"].as_f64().unwrap().is_finite());

        assert_eq!(first.len(), second.len());
        for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
            assert_eq!(name_a, name_b);
            assert_eq!(bytes_a, bytes_b, "{name_a} differs between reruns");
        }
    });
}
