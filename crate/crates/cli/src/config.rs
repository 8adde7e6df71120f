//! Training run configuration: preset -> config file -> flag overrides, in
//! increasing precedence. The resolved configuration is written next to the
//! run outputs as a plain key=value file so every run records its provenance
//! and can be re-run from its own artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use despeckler_core::error::{Error, Result};
use despeckler_core::model::ModelConfig;
use despeckler_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected 'desk' or 'paper')"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn model_config(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Paper => ModelConfig::paper(),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }
}

/// Apply `key = value` lines to a config. Unknown keys are errors; every
/// TrainConfig field is addressable.
pub fn apply_config_file(cfg: &mut TrainConfig, preset: &mut Preset, path: &Path) -> Result<()> {
    let text = despeckler_core::io::read_text(path)?;
    let mut problems = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected key=value, got '{line}'", lineno + 1));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if let Err(e) = apply_kv(cfg, preset, key, value) {
            problems.push(format!("line {}: {e}", lineno + 1));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{}: {}",
            path.display(),
            problems.join("; ")
        )))
    }
}

pub fn apply_kv(cfg: &mut TrainConfig, preset: &mut Preset, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
    }
    match key {
        "preset" => {
            let p = Preset::parse(value)?;
            *preset = p;
            let manifest = cfg.manifest.clone();
            let out_dir = cfg.out_dir.clone();
            *cfg = p.train_config();
            cfg.manifest = manifest;
            cfg.out_dir = out_dir;
        }
        "lr" => cfg.lr = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "lambda1" => cfg.weights.lambda1 = num(key, value)?,
        "lambda2" => cfg.weights.lambda2 = num(key, value)?,
        "normalize" => cfg.weights.normalize = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "checkpoint_every" => cfg.checkpoint_every = num(key, value)?,
        "val_every" => cfg.val_every = num(key, value)?,
        "beta1" => cfg.beta1 = num(key, value)?,
        "beta2" => cfg.beta2 = num(key, value)?,
        "eps" => cfg.eps = num(key, value)?,
        "manifest" => cfg.manifest = PathBuf::from(value),
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        other => {
            return Err(Error::Config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

pub fn render_config(cfg: &TrainConfig, preset: Preset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# despeckler resolved training config");
    let _ = writeln!(s, "preset = {}", preset.name());
    let _ = writeln!(s, "lr = {}", cfg.lr);
    let _ = writeln!(s, "epochs = {}", cfg.epochs);
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "lambda1 = {}", cfg.weights.lambda1);
    let _ = writeln!(s, "lambda2 = {}", cfg.weights.lambda2);
    let _ = writeln!(s, "normalize = {}", cfg.weights.normalize);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "checkpoint_every = {}", cfg.checkpoint_every);
    let _ = writeln!(s, "val_every = {}", cfg.val_every);
    let _ = writeln!(s, "beta1 = {}", cfg.beta1);
    let _ = writeln!(s, "beta2 = {}", cfg.beta2);
    let _ = writeln!(s, "eps = {}", cfg.eps);
    let _ = writeln!(s, "manifest = {}", cfg.manifest.display());
    let _ = writeln!(s, "out_dir = {}", cfg.out_dir.display());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_file_format() {
        let mut cfg = TrainConfig::desk();
        let mut preset = Preset::Desk;
        apply_kv(&mut cfg, &mut preset, "lr", "0.0002").unwrap();
        apply_kv(&mut cfg, &mut preset, "epochs", "400").unwrap();
        assert_eq!(cfg.lr, 2e-4);
        assert_eq!(cfg.epochs, 400);
        let rendered = render_config(&cfg, preset);
        assert!(rendered.contains("lr = 0.0002"));
        assert!(rendered.contains("epochs = 400"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut cfg = TrainConfig::desk();
        let mut preset = Preset::Desk;
        assert!(apply_kv(&mut cfg, &mut preset, "learning_rate", "0.1").is_err());
    }
}
