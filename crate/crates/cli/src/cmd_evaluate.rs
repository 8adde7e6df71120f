use std::path::{Path, PathBuf};

use clap::Args;
use despeckler_core::checkpoint::load_checkpoint;
use despeckler_core::dataset::{load_manifest, Split};
use despeckler_core::error::{Error, Result};
use despeckler_core::io::{read_image_any, read_text, write_text};
use despeckler_core::metrics::{evaluate_pairs, evaluate_regions, parse_region_file, EvalReport};
use despeckler_core::Tensor32;

#[derive(Args)]
pub struct EvaluateArgs {
    /// `paired` (PSNR/SSIM against references) or `region` (ENL/Cx)
    #[arg(long, value_parser = ["paired", "region"])]
    mode: String,
    /// Paired mode: dataset manifest to evaluate
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Which manifest split to use
    #[arg(long, default_value = "val", value_parser = ["train", "val"])]
    split: String,
    /// Optional checkpoint: evaluate its despeckled outputs instead of the
    /// raw speckled inputs (the speckled baseline is always reported)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Paired mode without a manifest: estimate images (file or directory)
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Paired mode without a manifest: clean references (file or directory)
    #[arg(long)]
    references: Option<PathBuf>,
    /// Region mode: region list file (label x0 y0 width height per line)
    #[arg(long)]
    regions: Option<PathBuf>,
    /// PSNR/SSIM peak value (1.0 for normalized data, 255 for 8-bit)
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Directory for report files (report.txt, report.kv)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn list_images(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
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
    Ok(files)
}

fn paired_from_manifest(args: &EvaluateArgs, manifest_path: &Path) -> Result<EvalReport> {
    let manifest = load_manifest(manifest_path)?;
    let split = if args.split == "train" { Split::Train } else { Split::Val };
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Data(format!("manifest has no {} pairs", args.split)));
    }
    let model = match &args.checkpoint {
        Some(ckpt) => Some(load_checkpoint::<f32>(ckpt)?.0),
        None => None,
    };
    let mut items = Vec::with_capacity(entries.len());
    let mut baseline_items = Vec::with_capacity(entries.len());
    for e in entries {
        let pair = manifest.load_pair::<f32>(e)?;
        baseline_items.push((
            format!("{}-speckled", e.id),
            pair.speckled.clone(),
            pair.clean.clone(),
        ));
        if let Some(model) = &model {
            let estimate = model.despeckle(&pair.speckled)?;
            items.push((e.id.clone(), estimate, pair.clean.clone()));
        }
    }
    // The speckled-vs-clean baseline is always part of the report.
    let mut report = evaluate_pairs(&baseline_items, args.peak)?;
    if !items.is_empty() {
        let despeckled = evaluate_pairs(&items, args.peak)?;
        println!(
            "baseline speckled: mean PSNR {:.2} dB, mean SSIM {:.4}",
            report.mean_psnr(),
            report.mean_ssim()
        );
        report = despeckled;
    }
    Ok(report)
}

fn paired_from_files(args: &EvaluateArgs) -> Result<EvalReport> {
    let (inputs, references) = match (&args.inputs, &args.references) {
        (Some(i), Some(r)) => (i, r),
        _ => {
            return Err(Error::Config(
                "paired mode needs either --manifest or both --inputs and --references".into(),
            ))
        }
    };
    let input_files = list_images(inputs)?;
    let ref_files = list_images(references)?;
    if input_files.is_empty() {
        return Err(Error::Data(format!("{}: no images found", inputs.display())));
    }
    if input_files.len() != ref_files.len() {
        return Err(Error::Data(format!(
            "{} estimate images vs {} references; counts must match",
            input_files.len(),
            ref_files.len()
        )));
    }
    let mut items = Vec::with_capacity(input_files.len());
    for (est_path, ref_path) in input_files.iter().zip(&ref_files) {
        let est: Tensor32 = read_image_any(est_path)?;
        let reference: Tensor32 = read_image_any(ref_path)?;
        let id = est_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        items.push((id, est, reference));
    }
    evaluate_pairs(&items, args.peak)
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let report = match args.mode.as_str() {
        "paired" => match &args.manifest {
            Some(m) => paired_from_manifest(&args, &m.clone())?,
            None => paired_from_files(&args)?,
        },
        "region" => {
            let input = args.inputs.as_ref().ok_or_else(|| {
                Error::Config("region mode needs --inputs pointing at one image".into())
            })?;
            let regions_path = args.regions.as_ref().ok_or_else(|| {
                Error::Config("region mode needs --regions with a region list file".into())
            })?;
            let img: Tensor32 = read_image_any(input)?;
            let regions = parse_region_file(&read_text(regions_path)?)?;
            for (label, r) in &regions {
                // A flat region reports infinite ENL; surface it rather than
                // letting it silently skew the aggregate.
                let _ = (label, r);
            }
            let report = evaluate_regions(&img, &regions)?;
            for r in &report.regions {
                if r.enl.is_infinite() {
                    eprintln!("warning: region '{}' is perfectly flat (ENL = inf)", r.label);
                }
            }
            report
        }
        _ => unreachable!("clap restricts the mode values"),
    };

    print!("{}", report.render_table());
    if !report.pairs.is_empty() {
        println!(
            "aggregate: mean PSNR {:.2} dB, mean SSIM {:.4} over {} pair(s)",
            report.mean_psnr(),
            report.mean_ssim(),
            report.pairs.len()
        );
    }
    if !report.regions.is_empty() {
        println!(
            "aggregate: mean ENL {:.2}, mean Cx {:.4} over {} region(s)",
            report.mean_enl(),
            report.mean_cx(),
            report.regions.len()
        );
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join("report.txt"), &report.render_table())?;
        write_text(&out.join("report.kv"), &report.render_kv())?;
        println!("report files: {}", out.display());
    }
    Ok(())
}
