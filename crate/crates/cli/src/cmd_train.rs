use std::path::PathBuf;

use clap::Args;
use despeckler_core::checkpoint::load_checkpoint;
use despeckler_core::dataset::load_manifest;
use despeckler_core::error::{Error, Result};
use despeckler_core::model::DespeckleNet;
use despeckler_core::train::fit;

use crate::config::{apply_config_file, apply_kv, render_config, Preset};

#[derive(Args)]
pub struct TrainArgs {
    /// Key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model and protocol preset
    #[arg(long, default_value = "desk", value_parser = Preset::parse)]
    preset: Preset,
    /// Dataset manifest produced by `simulate`
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (checkpoints, metrics log, resolved config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from a checkpoint written by a previous run
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Learning rate override
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch count override
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size override
    #[arg(long)]
    batch_size: Option<usize>,
    /// L2 term weight override
    #[arg(long)]
    lambda1: Option<f64>,
    /// Total-variation term weight override
    #[arg(long)]
    lambda2: Option<f64>,
    /// RNG seed override (weight init, shuffling, dropout)
    #[arg(long)]
    seed: Option<u64>,
    /// Validation cadence override (epochs)
    #[arg(long)]
    val_every: Option<usize>,
    /// Checkpoint cadence override (epochs)
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut preset = args.preset;
    let mut cfg = preset.train_config();
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, &mut preset, path)?;
    }
    // Flags take highest precedence. Reapplying the flag preset only when it
    // was explicitly different from the file's would need clap introspection;
    // instead the file's `preset` key wins unless a flag value overrides a
    // concrete field.
    let overrides: &[(&str, Option<String>)] = &[
        ("lr", args.lr.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("lambda1", args.lambda1.map(|v| v.to_string())),
        ("lambda2", args.lambda2.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("val_every", args.val_every.map(|v| v.to_string())),
        ("checkpoint_every", args.checkpoint_every.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            apply_kv(&mut cfg, &mut preset, key, v)?;
        }
    }
    if let Some(m) = &args.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if cfg.manifest.as_os_str().is_empty() {
        return Err(Error::Config(
            "no dataset manifest: pass --manifest or set manifest= in the config file".into(),
        ));
    }
    if cfg.out_dir.as_os_str().is_empty() {
        return Err(Error::Config(
            "no output directory: pass --out or set out_dir= in the config file".into(),
        ));
    }
    cfg.validate()?;

    let manifest = load_manifest(&cfg.manifest)?;
    let (model, state) = match &args.resume {
        Some(ckpt) => {
            let (model, state) = load_checkpoint::<f32>(ckpt)?;
            let state = state.ok_or_else(|| {
                Error::Checkpoint(format!(
                    "{}: checkpoint carries no training state to resume from",
                    ckpt.display()
                ))
            })?;
            (model, Some(state))
        }
        None => (DespeckleNet::<f32>::new(preset.model_config(), cfg.seed)?, None),
    };

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    despeckler_core::io::write_text(
        &cfg.out_dir.join("train.config"),
        &render_config(&cfg, preset),
    )?;

    println!(
        "training {} preset: {} parameters, {} epochs, lr {}, batch {}",
        preset.name(),
        model.parameter_count(),
        cfg.epochs,
        cfg.lr,
        cfg.batch_size
    );
    let report = fit(&model, &manifest, &cfg, state)?;
    println!(
        "done: {} epochs, final train loss {:.6e}, val PSNR {:.2} dB, val SSIM {:.4} (best PSNR {:.2})",
        report.epochs_run,
        report.final_train_loss,
        report.final_val_psnr,
        report.final_val_ssim,
        report.best_val_psnr
    );
    println!("log: {}", report.log_path.display());
    println!("latest checkpoint: {}", report.latest_checkpoint.display());
    println!("best checkpoint: {}", report.best_checkpoint.display());
    Ok(())
}
