//! Training, inference, evaluation and ablation orchestration behind the
//! `matteforge` CLI.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{MatteError, Result};
use crate::loss::LossConfig;
use crate::model::{ModelConfig, ENCODER_STRIDE};
use crate::trimap::TrimapGenConfig;

mod ablate;
mod data;
mod eval;
mod infer;
mod synth;
mod train;

pub use ablate::{ablate, AblateConfig, AblationReport, VariantResult};
pub use eval::{eval, EvalOutcome};
pub use infer::infer;
pub use synth::{synth, Manifest, ManifestSample};
pub use train::{train, TrainOutcome};

/// Stream separator so trimap randomness and data-pairing randomness come
/// from independent seeded streams.
pub(crate) const TRIMAP_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
/// Offset separating a sample's SP-trimap seed from its perturbation seed.
pub(crate) const PERTURB_OFFSET: u64 = 0x517c_c1b7_2722_0a95;

/// Full-scale training recipe, recorded for reference; the active defaults
/// below are desk-scale.
pub const FULL_SCALE_TOTAL_STEPS: u64 = 300_000;
pub const FULL_SCALE_WARMUP_STEPS: u64 = 7_500;
pub const FULL_SCALE_BATCH_SIZE: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub precision: Precision,
    /// Candidate square crop sizes; one is drawn per sample.
    pub crop_sizes: Vec<usize>,
    /// Network input size every crop is resized to.
    pub crop_out: usize,
    /// Random morphological perturbation of the TCP trimap. Off means the
    /// two paths see the same trimap.
    pub imrp_enabled: bool,
    pub fg_dir: PathBuf,
    pub alpha_dir: PathBuf,
    pub bg_dir: PathBuf,
    pub out_dir: PathBuf,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub trimap: TrimapGenConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 2000,
            warmup_steps: 50,
            batch_size: 4,
            base_lr: 4e-4,
            seed: 0,
            checkpoint_every: 0,
            precision: Precision::F32,
            crop_sizes: vec![320, 480, 640],
            crop_out: 320,
            imrp_enabled: true,
            fg_dir: PathBuf::from("dataset/fg"),
            alpha_dir: PathBuf::from("dataset/alpha"),
            bg_dir: PathBuf::from("dataset/bg"),
            out_dir: PathBuf::from("out"),
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            trimap: TrimapGenConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(MatteError::Config("batch_size must be >= 1".into()));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(MatteError::Config(format!(
                "warmup_steps {} must be < total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.crop_out % ENCODER_STRIDE != 0 {
            return Err(MatteError::Config(format!(
                "crop_out {} must be a multiple of {ENCODER_STRIDE}",
                self.crop_out
            )));
        }
        if self.crop_sizes.is_empty() {
            return Err(MatteError::Config("crop_sizes must not be empty".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(MatteError::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        Ok(())
    }
}

/// The three rows of the ablation table, in presentation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    BaselineTcp,
    BaselineTcpImrp,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 3] = [
        AblationVariant::Baseline,
        AblationVariant::BaselineTcp,
        AblationVariant::BaselineTcpImrp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::BaselineTcp => "baseline+TCP",
            AblationVariant::BaselineTcpImrp => "baseline+TCP+IMRP",
        }
    }

    /// Directory-safe variant name.
    pub fn slug(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::BaselineTcp => "baseline_tcp",
            AblationVariant::BaselineTcpImrp => "baseline_tcp_imrp",
        }
    }

    pub fn tcp_enabled(self) -> bool {
        !matches!(self, AblationVariant::Baseline)
    }

    pub fn imrp_enabled(self) -> bool {
        matches!(self, AblationVariant::BaselineTcpImrp)
    }

    /// Derives this variant's training config. IMRP off means the TCP trimap
    /// equals the SP trimap and the background enhancement term is dropped.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.tcp_enabled = self.tcp_enabled();
        cfg.imrp_enabled = self.imrp_enabled();
        if !self.imrp_enabled() {
            cfg.loss.w2 = 0.0;
        }
        cfg.out_dir = base.out_dir.join(self.slug());
        cfg
    }
}

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Forces single-threaded execution and a fixed reduction order everywhere.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

/// Worker-thread cap: 1 unless MATTEFORGE_THREADS raises it, and always 1 in
/// deterministic mode.
pub fn thread_cap() -> usize {
    if deterministic() {
        return 1;
    }
    std::env::var("MATTEFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
