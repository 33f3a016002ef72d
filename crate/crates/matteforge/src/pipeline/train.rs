//! Training loop: on-the-fly composition, dual-trimap batch assembly, the
//! combined loss over the SP trimap's unknown region, Adam with warmup +
//! cosine annealing, JSONL logging and periodic checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::engine::checkpoint::CheckpointEntry;
use crate::engine::ops::NormMode;
use crate::engine::optim::{AdamConfig, AdamState, LrSchedule};
use crate::error::{MatteError, Result};
use crate::imaging::{composite, crop_for_training, fit_background, AlphaMatte, Image};
use crate::loss::{alpha_prediction_loss, background_enhancement_loss, total_loss};
use crate::model::{write_input_planes, MattingModel};
use crate::scalar::Scalar;
use crate::trimap::{gen_sp_trimap, perturb_for_tcp, trimap_from_alpha, Label};

use super::data::{load_alphas_dir, load_images_dir, match_fg_alpha};
use super::{Precision, TrainConfig};

use super::{PERTURB_OFFSET, TRIMAP_STREAM};

const MAX_CROP_RETRIES: usize = 10;

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub final_loss: f64,
    pub final_loss_a: f64,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run::<f32>(cfg),
        Precision::F64 => run::<f64>(cfg),
    }
}

struct BatchItem<S: Scalar> {
    planes_sp: Vec<S>,
    planes_tcp: Vec<S>,
    gt: Vec<S>,
    unknown: Vec<bool>,
    pairing: String,
    sp_hash: u64,
    tcp_hash: u64,
}

/// Draws one training example: random fg/bg pairing, on-the-fly composite,
/// random crop, SP trimap, perturbed TCP trimap. Retries the draw when the
/// crop contains no unknown pixels.
fn draw_item<S: Scalar>(
    cfg: &TrainConfig,
    dataset: &[(String, Image, AlphaMatte)],
    backgrounds: &[(String, Image)],
    data_rng: &mut ChaCha8Rng,
    seed_rng: &mut ChaCha8Rng,
) -> Result<BatchItem<S>> {
    for _ in 0..MAX_CROP_RETRIES {
        let (fg_id, fg, alpha) = &dataset[data_rng.gen_range(0..dataset.len())];
        let (bg_id, bg) = &backgrounds[data_rng.gen_range(0..backgrounds.len())];
        let bg_fit = fit_background(bg, fg.height, fg.width);
        let comp = composite(fg, &bg_fit, alpha)?;
        let base = trimap_from_alpha(alpha);
        let crop = crop_for_training(
            &comp,
            alpha,
            &base,
            &cfg.crop_sizes,
            cfg.crop_out,
            data_rng,
        )?;
        if trimap_from_alpha(&crop.alpha).count(Label::Unknown) == 0 {
            continue;
        }
        // trimap randomness is seeded per item from its own stream so the
        // fg/bg pairing sequence is identical across ablation variants
        let item_seed: u64 = seed_rng.gen();
        let mut sp_rng = ChaCha8Rng::seed_from_u64(item_seed);
        let sp = gen_sp_trimap(&crop.alpha, &cfg.trimap, &mut sp_rng);
        let tcp = if cfg.imrp_enabled {
            let mut p_rng = ChaCha8Rng::seed_from_u64(item_seed.wrapping_add(PERTURB_OFFSET));
            perturb_for_tcp(&sp, &cfg.trimap, &mut p_rng)
        } else {
            sp.clone()
        };
        let hw = cfg.crop_out * cfg.crop_out;
        let mut planes_sp = vec![S::zero(); 6 * hw];
        let mut planes_tcp = vec![S::zero(); 6 * hw];
        write_input_planes(&crop.image, &sp, &mut planes_sp);
        write_input_planes(&crop.image, &tcp, &mut planes_tcp);
        let gt = crop
            .alpha
            .data()
            .iter()
            .map(|&v| S::from_f64_lossy(v as f64))
            .collect();
        return Ok(BatchItem {
            planes_sp,
            planes_tcp,
            gt,
            unknown: sp.unknown_mask(),
            pairing: format!("{fg_id}@{bg_id}{}", if crop.flipped { "~" } else { "" }),
            sp_hash: sp.content_hash(),
            tcp_hash: tcp.content_hash(),
        });
    }
    Err(MatteError::Data(format!(
        "no crop with unknown pixels found after {MAX_CROP_RETRIES} draws; \
         alphas appear to be fully binary at crop scale"
    )))
}

fn optimizer_entries<S: Scalar>(opt: &AdamState<S>) -> Vec<CheckpointEntry> {
    let mut entries = vec![CheckpointEntry::new(
        "opt/step",
        vec![1],
        vec![opt.step as f32],
    )];
    let mut names: Vec<&String> = opt.m.keys().collect();
    names.sort();
    for name in names {
        for (kind, map) in [("m", &opt.m), ("v", &opt.v)] {
            let data = &map[name];
            entries.push(CheckpointEntry::new(
                format!("opt/{kind}/{name}"),
                vec![data.len() as u64],
                data.iter().map(|v| v.to_f64_lossy() as f32).collect(),
            ));
        }
    }
    entries
}

fn dump_abort_state<S: Scalar>(
    cfg: &TrainConfig,
    model: &MattingModel<S>,
    step: u64,
    lr: f64,
    la: f64,
    lbg: f64,
) -> Result<PathBuf> {
    let params: Vec<serde_json::Value> = model
        .trainable_params()
        .iter()
        .map(|(name, p)| {
            let d = p.data();
            let max_abs = d
                .iter()
                .map(|v| v.to_f64_lossy().abs())
                .fold(0.0f64, f64::max);
            let non_finite = d.iter().filter(|v| !v.to_f64_lossy().is_finite()).count();
            json!({"name": name, "max_abs": max_abs, "non_finite": non_finite})
        })
        .collect();
    let dump = json!({
        "step": step,
        "lr": lr,
        "loss_a": la,
        "loss_bg": lbg,
        "params": params,
    });
    let path = cfg.out_dir.join("abort_state.json");
    std::fs::write(&path, serde_json::to_string_pretty(&dump).unwrap())
        .map_err(|e| MatteError::io(&path, e))?;
    Ok(path)
}

fn run<S: Scalar>(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let dataset = match_fg_alpha(load_images_dir(&cfg.fg_dir)?, load_alphas_dir(&cfg.alpha_dir)?)?;
    let backgrounds = load_images_dir(&cfg.bg_dir)?;
    if dataset.is_empty() {
        return Err(MatteError::Data(format!(
            "no training samples in {}",
            cfg.fg_dir.display()
        )));
    }
    if backgrounds.is_empty() {
        return Err(MatteError::Data(format!(
            "no backgrounds in {}",
            cfg.bg_dir.display()
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| MatteError::io(&cfg.out_dir, e))?;

    let model: MattingModel<S> = MattingModel::new(cfg.model.clone(), cfg.seed)?;
    let mut opt: AdamState<S> = AdamState::new(AdamConfig::default());
    let sched = LrSchedule::new(cfg.base_lr, cfg.warmup_steps, cfg.total_steps, 0.0)?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRIMAP_STREAM);

    let log_path = cfg.out_dir.join("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| MatteError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);

    let hw = cfg.crop_out * cfg.crop_out;
    let b = cfg.batch_size;
    let mut last_loss = f64::NAN;
    let mut last_la = f64::NAN;

    for step in 1..=cfg.total_steps {
        let mut x_sp = vec![S::zero(); b * 6 * hw];
        let mut x_tcp = vec![S::zero(); b * 6 * hw];
        let mut gt = vec![S::zero(); b * hw];
        let mut unknown = vec![false; b * hw];
        let mut pairings = Vec::with_capacity(b);
        let mut sp_hash = 0u64;
        let mut tcp_hash = 0u64;
        for i in 0..b {
            let item = draw_item::<S>(cfg, &dataset, &backgrounds, &mut data_rng, &mut seed_rng)?;
            x_sp[i * 6 * hw..(i + 1) * 6 * hw].copy_from_slice(&item.planes_sp);
            x_tcp[i * 6 * hw..(i + 1) * 6 * hw].copy_from_slice(&item.planes_tcp);
            gt[i * hw..(i + 1) * hw].copy_from_slice(&item.gt);
            unknown[i * hw..(i + 1) * hw].copy_from_slice(&item.unknown);
            pairings.push(item.pairing);
            sp_hash ^= item.sp_hash.rotate_left(i as u32);
            tcp_hash ^= item.tcp_hash.rotate_left(i as u32);
        }
        let shape = vec![b, 6, cfg.crop_out, cfg.crop_out];
        let x_sp = crate::engine::Tensor::constant(shape.clone(), x_sp);
        let x_tcp = crate::engine::Tensor::constant(shape, x_tcp);

        model.zero_grads();
        let trace = model.forward(&x_sp, &x_tcp, NormMode::Train)?;
        let eps = S::from_f64_lossy(cfg.loss.eps);
        let la = alpha_prediction_loss(&gt, &trace.alpha_pred, &unknown, eps)?;
        let lbg = background_enhancement_loss(
            &gt,
            &trace.alpha_pred,
            &unknown,
            S::from_f64_lossy(cfg.loss.theta),
            eps,
        )?;
        let loss = total_loss(
            &la,
            &lbg,
            S::from_f64_lossy(cfg.loss.w1),
            S::from_f64_lossy(cfg.loss.w2),
        );
        let la_v = la.item().to_f64_lossy();
        let lbg_v = lbg.item().to_f64_lossy();
        let loss_v = loss.item().to_f64_lossy();
        let lr = sched.lr_at(step)?;

        if !loss_v.is_finite() {
            let dump = dump_abort_state(cfg, &model, step, lr, la_v, lbg_v)?;
            return Err(MatteError::Numeric(format!(
                "non-finite loss {loss_v} at step {step}; state dumped to {}",
                dump.display()
            )));
        }

        loss.backward()?;
        // the schedule reaches exactly 0 at the final step; there is nothing
        // to apply there
        if lr > 0.0 {
            opt.step(model.trainable_params(), lr)?;
        }
        if !model.params_finite() {
            let dump = dump_abort_state(cfg, &model, step, lr, la_v, lbg_v)?;
            return Err(MatteError::Numeric(format!(
                "non-finite parameter after step {step}; state dumped to {}",
                dump.display()
            )));
        }

        let line = json!({
            "step": step,
            "lr": lr,
            "loss_a": la_v,
            "loss_bg": lbg_v,
            "loss": loss_v,
            "pairings": pairings,
            "sp_hash": format!("{sp_hash:016x}"),
            "tcp_hash": format!("{tcp_hash:016x}"),
        });
        writeln!(log, "{line}").map_err(|e| MatteError::io(&log_path, e))?;
        last_loss = loss_v;
        last_la = la_v;

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.total_steps {
            let path = cfg.out_dir.join(format!("checkpoint_{step:06}.mfck"));
            model.save_checkpoint(&path, &optimizer_entries(&opt))?;
        }
        if step % 100 == 0 || step == cfg.total_steps {
            log::info!("step {step}/{} lr {lr:.2e} loss {loss_v:.5}", cfg.total_steps);
        }
    }
    log.flush().map_err(|e| MatteError::io(&log_path, e))?;

    let checkpoint = cfg.out_dir.join("model.mfck");
    model.save_checkpoint(&checkpoint, &optimizer_entries(&opt))?;
    Ok(TrainOutcome {
        checkpoint,
        log_path,
        final_loss: last_loss,
        final_loss_a: last_la,
    })
}
