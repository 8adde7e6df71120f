use std::path::{Path, PathBuf};

use clap::Args;
use despeckler_core::checkpoint::load_checkpoint;
use despeckler_core::error::{Error, Result};
use despeckler_core::io::{crop, read_image_any, reflect_pad_to_multiple, write_png_preview, write_tensor};

#[derive(Args)]
pub struct DespeckleArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image or directory of images (.png/.pgm/.ten)
    #[arg(long)]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Padding mode for inputs whose dims the model cannot consume directly;
    /// `reflect` mirrors the bottom/right edges and crops the output back
    #[arg(long, value_parser = ["reflect"])]
    pad: Option<String>,
}

fn gather_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "pgm" || e == "pnm" || e == "ten"
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no supported images (.png/.pgm/.pnm/.ten)",
            path.display()
        )));
    }
    Ok(files)
}

pub fn run(args: DespeckleArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&args.checkpoint)?;
    let divisor = model.config().required_divisor();
    let inputs = gather_inputs(&args.input)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    for input in &inputs {
        let image = read_image_any::<f32>(input)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let estimate = if h % divisor == 0 && w % divisor == 0 {
            model.despeckle(&image)?
        } else if args.pad.as_deref() == Some("reflect") {
            let (padded, oh, ow) = reflect_pad_to_multiple(&image, divisor)?;
            crop(&model.despeckle(&padded)?, oh, ow)?
        } else {
            return Err(Error::shape(format!(
                "{}: {h}x{w} is not divisible by {divisor}; rerun with --pad reflect",
                input.display()
            )));
        };
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("output");
        let ten_path = args.out.join(format!("{stem}-despeckled.ten"));
        let png_path = args.out.join(format!("{stem}-despeckled.png"));
        write_tensor(&ten_path, &estimate)?;
        write_png_preview(&png_path, &estimate)?;
        println!("{} -> {} (+ preview)", input.display(), ten_path.display());
    }
    println!("despeckled {} image(s)", inputs.len());
    Ok(())
}
