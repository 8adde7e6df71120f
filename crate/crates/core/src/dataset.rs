//! Synthetic training data: center-crop a clean grayscale corpus to patches,
//! speckle each patch with a per-image derived seed, and write (clean,
//! speckled) .ten pairs plus PNG previews under a line-oriented manifest.
//!
//! Every per-image RNG stream is derived from (dataset seed, image index),
//! so building in parallel and rebuilding both give byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io;
use crate::rng::{SplitMix64, STREAM_DATASET};
use crate::scalar::Scalar;
use crate::speckle::{apply_speckle, ImagePair, SpeckleParams};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub patch_size: usize,
    pub looks: f64,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
}

impl Default for BuildConfig {
    /// Paper-scale defaults: 450/50 patches of 256x256 single-look speckle.
    fn default() -> Self {
        BuildConfig {
            patch_size: 256,
            looks: 1.0,
            seed: 42,
            train_count: 450,
            val_count: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    pub speckled_path: PathBuf,
    pub seed: u64,
    pub looks: f64,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub patch_size: usize,
    pub looks: f64,
    pub seed: u64,
    /// Speckled values are not clipped to [0,1]; recorded so downstream
    /// consumers know the pairs carry the full dynamic range.
    pub clipped: bool,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn load_pair<S: Scalar>(&self, entry: &ManifestEntry) -> Result<ImagePair<S>> {
        let clean = io::read_tensor::<S>(&self.root.join(&entry.clean_path))?;
        let speckled = io::read_tensor::<S>(&self.root.join(&entry.speckled_path))?;
        if clean.shape() != speckled.shape() {
            return Err(Error::Data(format!(
                "pair {}: clean {:?} and speckled {:?} dims disagree",
                entry.id,
                clean.shape(),
                speckled.shape()
            )));
        }
        Ok(ImagePair {
            clean,
            speckled,
            params: SpeckleParams {
                looks: entry.looks,
                seed: entry.seed,
            },
        })
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_NAME)
    }
}

/// Outcome of a build: the manifest plus warnings about skipped inputs.
#[derive(Debug)]
pub struct BuildReport {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "pgm" || e == "pnm"
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn center_crop(data: &[f64], h: usize, w: usize, patch: usize) -> Vec<f64> {
    let y0 = (h - patch) / 2;
    let x0 = (w - patch) / 2;
    let mut out = Vec::with_capacity(patch * patch);
    for y in 0..patch {
        let row = (y0 + y) * w + x0;
        out.extend_from_slice(&data[row..row + patch]);
    }
    out
}

/// Build the dataset on disk and return its manifest.
pub fn build_dataset(corpus_dir: &Path, out_dir: &Path, cfg: &BuildConfig) -> Result<BuildReport> {
    if cfg.patch_size == 0 {
        return Err(Error::InvalidParam("patch size must be >= 1".into()));
    }
    SpeckleParams::new(cfg.looks, cfg.seed)?;
    let wanted = cfg.train_count + cfg.val_count;
    if wanted == 0 {
        return Err(Error::InvalidParam("requested an empty dataset".into()));
    }

    let mut warnings = Vec::new();
    let mut usable: Vec<(PathBuf, Vec<f64>)> = Vec::new();
    for path in list_corpus(corpus_dir)? {
        if usable.len() == wanted {
            break;
        }
        match io::read_grayscale_image(&path) {
            Ok((data, h, w)) => {
                if h < cfg.patch_size || w < cfg.patch_size {
                    warnings.push(format!(
                        "skipping {}: {h}x{w} is smaller than patch {}",
                        path.display(),
                        cfg.patch_size
                    ));
                    continue;
                }
                usable.push((path, center_crop(&data, h, w, cfg.patch_size)));
            }
            Err(e) => warnings.push(format!("skipping unreadable image: {e}")),
        }
    }
    if usable.is_empty() {
        return Err(Error::Data(format!(
            "no usable corpus images in {}",
            corpus_dir.display()
        )));
    }
    if usable.len() < wanted {
        return Err(Error::Data(format!(
            "corpus provides {} usable images but the split needs {} ({} train + {} val)",
            usable.len(),
            wanted,
            cfg.train_count,
            cfg.val_count
        )));
    }

    for sub in ["clean", "speckled", "previews"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir, e))?;
    }

    let entries: Vec<ManifestEntry> = (0..wanted)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let (split, ordinal) = if i < cfg.train_count {
                (Split::Train, i)
            } else {
                (Split::Val, i - cfg.train_count)
            };
            let id = format!("{}-{:04}", split.prefix(), ordinal);
            let image_seed =
                SplitMix64::derive(cfg.seed, &[STREAM_DATASET, i as u64]).next_u64();
            let params = SpeckleParams::new(cfg.looks, image_seed)?;

            let clean_f32: Vec<f32> = usable[i].1.iter().map(|&v| v as f32).collect();
            let clean =
                Tensor::<f32>::from_vec(vec![1, cfg.patch_size, cfg.patch_size], clean_f32)?;
            let pair = apply_speckle(&clean, params)?;

            let clean_rel = PathBuf::from(format!("clean/{id}.ten"));
            let speckled_rel = PathBuf::from(format!("speckled/{id}.ten"));
            io::write_tensor(&out_dir.join(&clean_rel), &pair.clean)?;
            io::write_tensor(&out_dir.join(&speckled_rel), &pair.speckled)?;
            io::write_png_preview(&out_dir.join(format!("previews/{id}-clean.png")), &pair.clean)?;
            io::write_png_preview(
                &out_dir.join(format!("previews/{id}-speckled.png")),
                &pair.speckled,
            )?;

            Ok(ManifestEntry {
                id,
                clean_path: clean_rel,
                speckled_path: speckled_rel,
                seed: image_seed,
                looks: cfg.looks,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        patch_size: cfg.patch_size,
        looks: cfg.looks,
        seed: cfg.seed,
        clipped: false,
        entries,
    };
    io::write_text(&manifest.path(), &render_manifest(&manifest))?;
    Ok(BuildReport { manifest, warnings })
}

fn render_manifest(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# despeckler dataset manifest v1");
    let _ = writeln!(
        s,
        "# patch={} looks={} seed={} clip={}",
        m.patch_size, m.looks, m.seed, m.clipped
    );
    let _ = writeln!(
        s,
        "# train={} val={}",
        m.count(Split::Train),
        m.count(Split::Val)
    );
    let _ = writeln!(s, "# columns: pair-id\tclean-path\tspeckled-path\tseed\tlooks");
    for e in &m.entries {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            e.id,
            e.clean_path.display(),
            e.speckled_path.display(),
            e.seed,
            e.looks
        );
    }
    s
}

/// Parse a manifest file; entry paths stay relative to its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = io::read_text(path)?;
    let root = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut patch_size = 0usize;
    let mut looks = 1.0f64;
    let mut seed = 0u64;
    let mut clipped = false;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some((k, v)) = token.split_once('=') {
                    match k {
                        "patch" => patch_size = v.parse().unwrap_or(0),
                        "looks" => looks = v.parse().unwrap_or(1.0),
                        "seed" => seed = v.parse().unwrap_or(0),
                        "clip" => clipped = v == "true",
                        _ => {}
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{}:{}: expected 5 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        let split = if id.starts_with("train-") {
            Split::Train
        } else if id.starts_with("val-") {
            Split::Val
        } else {
            return Err(Error::Data(format!(
                "{}:{}: pair id '{id}' has neither train- nor val- prefix",
                path.display(),
                lineno + 1
            )));
        };
        let parse_err = |what: &str| {
            Error::Data(format!(
                "{}:{}: bad {what} field",
                path.display(),
                lineno + 1
            ))
        };
        entries.push(ManifestEntry {
            id,
            clean_path: PathBuf::from(fields[1]),
            speckled_path: PathBuf::from(fields[2]),
            seed: fields[3].parse().map_err(|_| parse_err("seed"))?,
            looks: fields[4].parse().map_err(|_| parse_err("looks"))?,
            split,
        });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest lists no pairs",
            path.display()
        )));
    }
    Ok(Manifest {
        root,
        patch_size,
        looks,
        seed,
        clipped,
        entries,
    })
}
