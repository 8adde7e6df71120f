//! End-to-end supervised training on synthetic pairs: seeded shuffling,
//! Adam updates, periodic validation (PSNR/SSIM against the clean targets),
//! checkpointing of the latest and best models, and a tab-separated metrics
//! log. Every random draw derives from (seed, stream, position), so a run is
//! bit-reproducible and a resumed run continues the exact trajectory.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::checkpoint;
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossWeights};
use crate::metrics::{psnr, ssim};
use crate::model::{DespeckleNet, Mode};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{SplitMix64, STREAM_DROPOUT, STREAM_SHUFFLE};
use crate::scalar::Scalar;
use crate::speckle::ImagePair;

pub const LATEST_CHECKPOINT: &str = "checkpoint-latest.ckpt";
pub const BEST_CHECKPOINT: &str = "checkpoint-best.ckpt";
pub const METRICS_LOG: &str = "metrics.log";
pub const LOG_HEADER: &str = "# epoch\ttrain_loss\tval_psnr_db\tval_ssim\twall_s";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Save the latest checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
    /// Run validation every this many epochs (and at the end).
    pub val_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    /// Paper-scale protocol: learning rate 2e-4 for 400 epochs.
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            epochs: 400,
            batch_size: 8,
            weights: LossWeights::default(),
            seed: 42,
            checkpoint_every: 20,
            val_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig::default()
    }

    /// Quick desk-scale protocol for the reduced model.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 30,
            batch_size: 2,
            checkpoint_every: 10,
            val_every: 5,
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Validate every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            problems.push(format!("lr must be > 0 (got {})", self.lr));
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if self.checkpoint_every == 0 {
            problems.push("checkpoint_every must be >= 1".into());
        }
        if self.val_every == 0 {
            problems.push("val_every must be >= 1".into());
        }
        if self.weights.lambda1 < 0.0 || self.weights.lambda2 < 0.0 {
            problems.push(format!(
                "loss weights must be >= 0 (got lambda1={} lambda2={})",
                self.weights.lambda1, self.weights.lambda2
            ));
        }
        for (label, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{label} must lie in [0,1) (got {v})"));
            }
        }
        if !(self.eps > 0.0) {
            problems.push(format!("eps must be > 0 (got {})", self.eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Optimizer and progress state carried across steps and checkpoints. The
/// config fingerprint fields let a resume refuse a mismatched setup.
#[derive(Debug, Clone)]
pub struct TrainState<S: Scalar> {
    pub epochs_done: u64,
    pub step: u64,
    pub best_val_psnr: f64,
    pub adam: AdamState<S>,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: u64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl<S: Scalar> TrainState<S> {
    pub fn fresh(model: &DespeckleNet<S>, cfg: &TrainConfig) -> Self {
        TrainState {
            epochs_done: 0,
            step: 0,
            best_val_psnr: f64::NEG_INFINITY,
            adam: AdamState::for_params(&model.parameters()),
            seed: cfg.seed,
            lr: cfg.lr,
            batch_size: cfg.batch_size as u64,
            lambda1: cfg.weights.lambda1,
            lambda2: cfg.weights.lambda2,
        }
    }

    fn check_resume(&self, cfg: &TrainConfig) -> Result<()> {
        let mut mismatches = Vec::new();
        if self.seed != cfg.seed {
            mismatches.push(format!("seed {} vs {}", self.seed, cfg.seed));
        }
        if self.lr != cfg.lr {
            mismatches.push(format!("lr {} vs {}", self.lr, cfg.lr));
        }
        if self.batch_size != cfg.batch_size as u64 {
            mismatches.push(format!("batch_size {} vs {}", self.batch_size, cfg.batch_size));
        }
        if self.lambda1 != cfg.weights.lambda1 || self.lambda2 != cfg.weights.lambda2 {
            mismatches.push(format!(
                "loss weights ({}, {}) vs ({}, {})",
                self.lambda1, self.lambda2, cfg.weights.lambda1, cfg.weights.lambda2
            ));
        }
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "resume config mismatch: {}",
                mismatches.join("; ")
            )))
        }
    }
}

/// One optimization step over a batch: forward each pair, average the
/// composite losses, backpropagate, update, and reset gradients.
pub fn train_step<S: Scalar>(
    model: &DespeckleNet<S>,
    batch: &[ImagePair<S>],
    cfg: &TrainConfig,
    state: &mut TrainState<S>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("train_step: empty batch".into()));
    }
    let mut dropout = SplitMix64::derive(cfg.seed, &[STREAM_DROPOUT, state.step]);
    let mut mode = Mode::Train {
        dropout: &mut dropout,
    };
    let mut sum: Option<crate::tensor::Tensor<S>> = None;
    for pair in batch {
        let estimate = model.forward(&pair.speckled, &mut mode)?;
        let loss = total_loss(&estimate, &pair.clean, &cfg.weights)?;
        sum = Some(match sum {
            None => loss,
            Some(acc) => acc.add(&loss)?,
        });
    }
    let batch_loss = sum.unwrap().scale(S::one() / S::from_usize(batch.len()));
    let value = batch_loss.item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss is {value} at step {} (epoch {}): batch of {} pairs, lr {}, \
             lambda1 {}, lambda2 {}",
            state.step,
            state.epochs_done,
            batch.len(),
            cfg.lr,
            cfg.weights.lambda1,
            cfg.weights.lambda2
        )));
    }
    batch_loss.backward()?;
    state.step += 1;
    let params = model.parameters();
    state.adam.step(&params, state.step, &cfg.adam())?;
    model.zero_grads();
    Ok(value)
}

/// Mean validation PSNR/SSIM of the despeckled output against the clean
/// references (peak 1.0, output clamped at zero).
pub fn validate<S: Scalar>(model: &DespeckleNet<S>, pairs: &[ImagePair<S>]) -> Result<(f64, f64)> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for pair in pairs {
        let estimate = model.despeckle(&pair.speckled)?;
        psnr_sum += psnr(&estimate, &pair.clean, 1.0)?;
        ssim_sum += ssim(&estimate, &pair.clean, 1.0)?;
    }
    let n = pairs.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub final_val_psnr: f64,
    pub final_val_ssim: f64,
    pub best_val_psnr: f64,
    pub log_path: PathBuf,
    pub latest_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// The epoch loop. `resume` continues from a loaded checkpoint state; the
/// subsequent trajectory is identical to the uninterrupted run because every
/// stream is derived from (seed, epoch/step), not from live RNG state.
pub fn fit<S: Scalar>(
    model: &DespeckleNet<S>,
    manifest: &Manifest,
    cfg: &TrainConfig,
    resume: Option<TrainState<S>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let train_entries: Vec<_> = manifest.split(Split::Train).collect();
    let val_entries: Vec<_> = manifest.split(Split::Val).collect();
    if train_entries.is_empty() {
        return Err(Error::Data("manifest has no training pairs".into()));
    }
    if val_entries.is_empty() {
        return Err(Error::Data("manifest has no validation pairs".into()));
    }
    let train_pairs: Vec<ImagePair<S>> = train_entries
        .iter()
        .map(|e| manifest.load_pair(e))
        .collect::<Result<_>>()?;
    let val_pairs: Vec<ImagePair<S>> = val_entries
        .iter()
        .map(|e| manifest.load_pair(e))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join(METRICS_LOG);
    let latest_path = cfg.out_dir.join(LATEST_CHECKPOINT);
    let best_path = cfg.out_dir.join(BEST_CHECKPOINT);

    let mut state = match resume {
        Some(state) => {
            state.check_resume(cfg)?;
            if state.epochs_done as usize >= cfg.epochs {
                return Err(Error::Config(format!(
                    "checkpoint has already completed {} of {} epochs",
                    state.epochs_done, cfg.epochs
                )));
            }
            state
        }
        None => TrainState::fresh(model, cfg),
    };
    let resuming = state.epochs_done > 0;
    let mut log = String::new();
    if !resuming {
        let _ = writeln!(log, "{LOG_HEADER}");
    }

    let start_epoch = state.epochs_done as usize;
    let clock = Instant::now();
    let mut final_train_loss = f64::NAN;
    let mut final_val = (f64::NAN, f64::NAN);
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        SplitMix64::derive(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ImagePair<S>> =
                chunk.iter().map(|&i| train_pairs[i].clone()).collect();
            loss_sum += train_step(model, &batch, cfg, &mut state)?;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        final_train_loss = train_loss;
        state.epochs_done = epoch as u64 + 1;

        let last_epoch = epoch + 1 == cfg.epochs;
        let mut val_cols = ("-".to_string(), "-".to_string());
        if (epoch + 1) % cfg.val_every == 0 || last_epoch {
            let (vp, vs) = validate(model, &val_pairs)?;
            final_val = (vp, vs);
            val_cols = (format!("{vp:.4}"), format!("{vs:.6}"));
            if vp > state.best_val_psnr {
                state.best_val_psnr = vp;
                checkpoint::save_checkpoint(&best_path, model, Some(&state))?;
            }
        }
        let _ = writeln!(
            log,
            "{}\t{:.6e}\t{}\t{}\t{:.3}",
            epoch + 1,
            train_loss,
            val_cols.0,
            val_cols.1,
            clock.elapsed().as_secs_f64()
        );
        if (epoch + 1) % cfg.checkpoint_every == 0 || last_epoch {
            checkpoint::save_checkpoint(&latest_path, model, Some(&state))?;
        }
    }

    if resuming {
        use std::io::Write as _;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        f.write_all(log.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
    } else {
        crate::io::write_text(&log_path, &log)?;
    }

    Ok(TrainReport {
        epochs_run: cfg.epochs - start_epoch,
        final_train_loss,
        final_val_psnr: final_val.0,
        final_val_ssim: final_val.1,
        best_val_psnr: state.best_val_psnr,
        log_path,
        latest_checkpoint: latest_path,
        best_checkpoint: best_path,
    })
}
