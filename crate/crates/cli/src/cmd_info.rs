use std::path::PathBuf;

use clap::Args;
use despeckler_core::checkpoint::load_checkpoint;
use despeckler_core::dataset::{load_manifest, Split};
use despeckler_core::error::{Error, Result};
use despeckler_core::io::read_tensor;
use despeckler_core::Tensor64;

#[derive(Args)]
pub struct InfoArgs {
    /// Summarize a checkpoint (architecture, parameters, training state)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Summarize a dataset manifest
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Summarize a .ten tensor file
    #[arg(long)]
    tensor: Option<PathBuf>,
}

pub fn run(args: InfoArgs) -> Result<()> {
    let mut shown = false;
    if let Some(path) = &args.checkpoint {
        let (model, state) = load_checkpoint::<f32>(path)?;
        let cfg = model.config();
        println!("checkpoint: {}", path.display());
        println!("  stages: {}", cfg.stages.len());
        for (i, s) in cfg.stages.iter().enumerate() {
            println!(
                "  stage {}: kernel {} embed {} heads {} reduction {} dropout {}",
                i + 1,
                s.kernel,
                s.embed_dim,
                s.heads,
                s.reduction,
                s.dropout
            );
        }
        println!("  decoder width: {}", cfg.decoder_dim);
        println!("  parameters: {}", model.parameter_count());
        println!("  input divisor: {}", cfg.required_divisor());
        match state {
            Some(st) => println!(
                "  training state: {} epochs, {} steps, best val PSNR {:.2} dB, seed {}",
                st.epochs_done, st.step, st.best_val_psnr, st.seed
            ),
            None => println!("  training state: none"),
        }
        shown = true;
    }
    if let Some(path) = &args.manifest {
        let m = load_manifest(path)?;
        println!("manifest: {}", path.display());
        println!(
            "  pairs: {} train + {} val",
            m.count(Split::Train),
            m.count(Split::Val)
        );
        println!("  patch: {}, looks: {}, seed: {}", m.patch_size, m.looks, m.seed);
        println!("  speckled values clipped: {}", m.clipped);
        shown = true;
    }
    if let Some(path) = &args.tensor {
        let t: Tensor64 = read_tensor(path)?;
        let data = t.data();
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in data.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        println!("tensor: {}", path.display());
        println!("  shape: {:?}", t.shape());
        println!(
            "  min {lo:.6} max {hi:.6} mean {:.6}",
            sum / data.len() as f64
        );
        shown = true;
    }
    if !shown {
        return Err(Error::Config(
            "info needs at least one of --checkpoint, --manifest, --tensor".into(),
        ));
    }
    Ok(())
}
