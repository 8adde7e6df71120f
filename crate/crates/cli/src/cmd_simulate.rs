use std::path::PathBuf;

use clap::Args;
use despeckler_core::dataset::{build_dataset, BuildConfig, Split};
use despeckler_core::error::{Error, Result};

#[derive(Args)]
pub struct SimulateArgs {
    /// Directory of clean grayscale images (PNG or PGM, 8/16-bit)
    #[arg(long)]
    corpus: PathBuf,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of looks L of the simulated speckle
    #[arg(long, default_value_t = 1.0)]
    looks: f64,
    /// Patch size (center crop)
    #[arg(long, default_value_t = 256)]
    patch: usize,
    /// Train,val pair counts
    #[arg(long, default_value = "450,50", value_parser = parse_split)]
    split: (usize, usize),
    /// RNG seed; per-image streams derive from it
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected TRAIN,VAL counts, got '{s}'"))?;
    let train = a.trim().parse().map_err(|_| format!("bad train count '{a}'"))?;
    let val = b.trim().parse().map_err(|_| format!("bad val count '{b}'"))?;
    Ok((train, val))
}

pub fn run(args: SimulateArgs) -> Result<()> {
    if !args.corpus.is_dir() {
        return Err(Error::Data(format!(
            "corpus directory {} does not exist",
            args.corpus.display()
        )));
    }
    let cfg = BuildConfig {
        patch_size: args.patch,
        looks: args.looks,
        seed: args.seed,
        train_count: args.split.0,
        val_count: args.split.1,
    };
    let report = build_dataset(&args.corpus, &args.out, &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let m = &report.manifest;
    println!("manifest: {}", m.path().display());
    println!(
        "pairs: {} train + {} val (patch {}, L={}, seed {})",
        m.count(Split::Train),
        m.count(Split::Val),
        m.patch_size,
        m.looks,
        m.seed
    );
    Ok(())
}
