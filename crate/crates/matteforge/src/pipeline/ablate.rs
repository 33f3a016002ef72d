//! Ablation study: trains the baseline, +TCP and +TCP+IMRP variants with
//! identical seeds and data order, evaluates all three on one shared
//! held-out set, and emits a combined table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MatteError, Result};
use crate::model::MattingModel;

use super::infer::infer_with_model;
use super::{eval, synth, train, AblationVariant, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub train: TrainConfig,
    /// Backgrounds per foreground in the held-out evaluation set.
    pub eval_per_fg: usize,
    /// Seed for synthesizing the held-out set, independent of training.
    pub eval_seed: u64,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            train: TrainConfig::default(),
            eval_per_fg: 2,
            eval_seed: 0x5eed_ea17,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub mean_sad: f64,
    pub mean_mse: f64,
    pub mean_grad: f64,
    pub mean_conn: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<VariantResult>,
    pub report_path: PathBuf,
}

impl AblationReport {
    pub fn format_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>10} {:>10} {:>10} {:>10}\n",
            "Variant", "SAD", "MSE", "Grad", "Conn"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:>10.4} {:>10.6} {:>10.4} {:>10.4}\n",
                r.name, r.mean_sad, r.mean_mse, r.mean_grad, r.mean_conn
            ));
        }
        out
    }
}

fn logged_pairings(log_path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(log_path).map_err(|e| MatteError::io(log_path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| MatteError::Data(format!("{}: bad log line: {e}", log_path.display())))?;
        out.push(v["pairings"].to_string());
    }
    Ok(out)
}

pub fn ablate(cfg: &AblateConfig) -> Result<AblationReport> {
    cfg.train.validate()?;
    let out_dir = &cfg.train.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| MatteError::io(out_dir, e))?;

    let eval_dir = out_dir.join("eval_set");
    let manifest = synth(
        &cfg.train.fg_dir,
        &cfg.train.alpha_dir,
        &cfg.train.bg_dir,
        cfg.eval_per_fg,
        &cfg.train.trimap,
        cfg.eval_seed,
        &eval_dir,
    )?;

    let mut rows = Vec::new();
    let mut reference_pairings: Option<Vec<String>> = None;
    for variant in AblationVariant::ALL {
        let vcfg = variant.apply(&cfg.train);
        log::info!("training ablation variant {}", variant.name());
        let outcome = train(&vcfg)?;

        let pairings = logged_pairings(&outcome.log_path)?;
        match &reference_pairings {
            None => reference_pairings = Some(pairings),
            Some(reference) => {
                if reference != &pairings {
                    return Err(MatteError::Data(format!(
                        "variant {} consumed a different sample sequence than the baseline",
                        variant.name()
                    )));
                }
            }
        }

        let (model, _) = MattingModel::<f32>::load_checkpoint(&outcome.checkpoint)?;
        let pred_dir = vcfg.out_dir.join("pred");
        std::fs::create_dir_all(&pred_dir).map_err(|e| MatteError::io(&pred_dir, e))?;
        for sample in &manifest.samples {
            infer_with_model(
                &model,
                &eval_dir.join(&sample.comp),
                &eval_dir.join(&sample.trimap_sp),
                &pred_dir.join(format!("{}.png", sample.id)),
            )?;
        }
        let outcome_eval = eval(
            &pred_dir,
            &eval_dir.join("alpha"),
            &eval_dir.join("trimap_sp"),
            &vcfg.out_dir,
        )?;
        if !outcome_eval.skipped.is_empty() {
            return Err(MatteError::Data(format!(
                "variant {}: {} evaluation samples missing",
                variant.name(),
                outcome_eval.skipped.len()
            )));
        }
        let r = &outcome_eval.report;
        rows.push(VariantResult {
            name: variant.name().to_string(),
            mean_sad: r.mean_sad,
            mean_mse: r.mean_mse,
            mean_grad: r.mean_grad,
            mean_conn: r.mean_conn,
            checkpoint: outcome.checkpoint,
        });
    }

    let report_path = out_dir.join("ablation.json");
    let report = AblationReport {
        rows,
        report_path: report_path.clone(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| MatteError::Data(format!("ablation serialization: {e}")))?;
    std::fs::write(&report_path, json).map_err(|e| MatteError::io(&report_path, e))?;
    let table_path = out_dir.join("ablation.txt");
    std::fs::write(&table_path, report.format_table()).map_err(|e| MatteError::io(&table_path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::checkpoint;
    use crate::pipeline::testutil::write_toy_dataset;

    #[test]
    fn three_variants_complete_with_shared_data_order() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path(), 2, 40);
        let cfg = AblateConfig {
            train: TrainConfig {
                total_steps: 4,
                warmup_steps: 1,
                batch_size: 2,
                crop_sizes: vec![32],
                crop_out: 32,
                model: crate::model::ModelConfig {
                    base_width: 2,
                    tcp_width: 2,
                    ..Default::default()
                },
                fg_dir: dir.path().join("fg"),
                alpha_dir: dir.path().join("alpha"),
                bg_dir: dir.path().join("bg"),
                out_dir: dir.path().join("out"),
                seed: 3,
                ..Default::default()
            },
            eval_per_fg: 1,
            eval_seed: 17,
        };
        let report = ablate(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].name, "baseline");
        assert_eq!(report.rows[2].name, "baseline+TCP+IMRP");
        // 3 rows x 4 metric columns in the rendered table
        let table = report.format_table();
        assert_eq!(table.lines().count(), 4);
        assert!(dir.path().join("out/ablation.json").exists());

        // baseline checkpoint carries no textural-path parameters
        let entries = checkpoint::load(&report.rows[0].checkpoint).unwrap();
        assert!(entries.iter().all(|e| !e.name.starts_with("tcp/")));
        let full = checkpoint::load(&report.rows[2].checkpoint).unwrap();
        assert!(full.iter().any(|e| e.name.starts_with("tcp/")));
    }
}
