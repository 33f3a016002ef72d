use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use matteforge::pipeline::{self, AblateConfig, TrainConfig};
use matteforge::trimap::TrimapGenConfig;
use matteforge::{MatteError, Result};

#[derive(Parser)]
#[command(name = "matteforge", version, about = "Dual-path image matting toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config file mirroring the TrainConfig field names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single worker thread and fixed reduction order.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Composite foregrounds over backgrounds and emit a dataset with
    /// trimaps and a manifest.
    Synth {
        #[arg(long)]
        fg_dir: PathBuf,
        #[arg(long)]
        alpha_dir: PathBuf,
        #[arg(long)]
        bg_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Backgrounds composited per foreground.
        #[arg(long, default_value_t = 2)]
        per_fg: usize,
    },
    /// Train the matting network.
    Train {
        #[arg(long)]
        fg_dir: Option<PathBuf>,
        #[arg(long)]
        alpha_dir: Option<PathBuf>,
        #[arg(long)]
        bg_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Predict a matte for one image and trimap.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        trimap: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute SAD/MSE/Grad/Conn over a directory of predictions.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        trimap_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate the three ablation variants.
    Ablate {
        #[arg(long)]
        fg_dir: Option<PathBuf>,
        #[arg(long)]
        alpha_dir: Option<PathBuf>,
        #[arg(long)]
        bg_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_json<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| MatteError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| MatteError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn apply_dataset_overrides(
    cfg: &mut TrainConfig,
    fg: Option<PathBuf>,
    alpha: Option<PathBuf>,
    bg: Option<PathBuf>,
    out: Option<PathBuf>,
) {
    if let Some(p) = fg {
        cfg.fg_dir = p;
    }
    if let Some(p) = alpha {
        cfg.alpha_dir = p;
    }
    if let Some(p) = bg {
        cfg.bg_dir = p;
    }
    if let Some(p) = out {
        cfg.out_dir = p;
    }
}

fn run(cli: Cli) -> Result<i32> {
    pipeline::set_deterministic(cli.common.deterministic);
    match cli.cmd {
        Cmd::Synth {
            fg_dir,
            alpha_dir,
            bg_dir,
            out_dir,
            per_fg,
        } => {
            let mut trimap_cfg: TrimapGenConfig = load_json(&cli.common.config)?;
            if let Some(seed) = cli.common.seed {
                trimap_cfg.seed = seed;
            }
            let manifest = pipeline::synth(
                &fg_dir,
                &alpha_dir,
                &bg_dir,
                per_fg,
                &trimap_cfg,
                trimap_cfg.seed,
                &out_dir,
            )?;
            println!(
                "wrote {} samples to {}",
                manifest.samples.len(),
                out_dir.display()
            );
            Ok(0)
        }
        Cmd::Train {
            fg_dir,
            alpha_dir,
            bg_dir,
            out_dir,
        } => {
            let mut cfg: TrainConfig = load_json(&cli.common.config)?;
            if let Some(seed) = cli.common.seed {
                cfg.seed = seed;
            }
            apply_dataset_overrides(&mut cfg, fg_dir, alpha_dir, bg_dir, out_dir);
            let outcome = pipeline::train(&cfg)?;
            println!(
                "final loss {:.6}; checkpoint at {}",
                outcome.final_loss,
                outcome.checkpoint.display()
            );
            Ok(0)
        }
        Cmd::Infer {
            checkpoint,
            image,
            trimap,
            output,
        } => {
            pipeline::infer(&checkpoint, &image, &trimap, &output)?;
            println!("wrote {}", output.display());
            Ok(0)
        }
        Cmd::Eval {
            pred_dir,
            gt_dir,
            trimap_dir,
            out_dir,
        } => {
            let outcome = pipeline::eval(&pred_dir, &gt_dir, &trimap_dir, &out_dir)?;
            print!("{}", outcome.report.format_table());
            println!("report written to {}", outcome.report_path.display());
            if outcome.skipped.is_empty() {
                Ok(0)
            } else {
                eprintln!("skipped samples: {:?}", outcome.skipped);
                Ok(2)
            }
        }
        Cmd::Ablate {
            fg_dir,
            alpha_dir,
            bg_dir,
            out_dir,
        } => {
            let mut cfg: AblateConfig = load_json(&cli.common.config)?;
            if let Some(seed) = cli.common.seed {
                cfg.train.seed = seed;
            }
            apply_dataset_overrides(&mut cfg.train, fg_dir, alpha_dir, bg_dir, out_dir);
            let report = pipeline::ablate(&cfg)?;
            print!("{}", report.format_table());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
