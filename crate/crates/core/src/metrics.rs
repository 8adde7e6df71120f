//! Despeckling quality metrics: full-reference PSNR and SSIM for synthetic
//! pairs, and the no-reference homogeneous-region statistics ENL (mean
//! squared over variance) and Cx (standard deviation over mean).
//!
//! Everything here computes in f64 regardless of the image scalar type;
//! ENL and Cx use the population variance, which matters for small regions.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn flat_image<S: Scalar>(t: &Tensor<S>) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = match t.shape() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(Error::shape(format!(
                "metrics expect a [1,H,W] or [H,W] image, got {other:?}"
            )))
        }
    };
    Ok((t.data().iter().map(|v| v.as_f64()).collect(), h, w))
}

/// `10 log10(peak^2 / MSE)` in dB; identical images report +infinity.
pub fn psnr<S: Scalar>(estimate: &Tensor<S>, reference: &Tensor<S>, peak: f64) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "psnr: shapes {:?} and {:?} must match",
            estimate.shape(),
            reference.shape()
        )));
    }
    if peak <= 0.0 {
        return Err(Error::InvalidParam(format!("psnr peak must be > 0, got {peak}")));
    }
    let a = estimate.data();
    let b = reference.data();
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -half..=half {
        for x in -half..=half {
            let r2 = (x * x + y * y) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over valid (unpadded) window positions.
pub fn ssim<S: Scalar>(estimate: &Tensor<S>, reference: &Tensor<S>, peak: f64) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "ssim: shapes {:?} and {:?} must match",
            estimate.shape(),
            reference.shape()
        )));
    }
    let (a, h, w) = flat_image(estimate)?;
    let (b, _, _) = flat_image(reference)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let total: f64 = (0..oh)
        .into_par_iter()
        .map(|y| {
            let mut row_sum = 0.0;
            for x in 0..ow {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for wy in 0..SSIM_WINDOW {
                    let row = (y + wy) * w + x;
                    let wrow = wy * SSIM_WINDOW;
                    for wx in 0..SSIM_WINDOW {
                        let wt = win[wrow + wx];
                        let av = a[row + wx];
                        let bv = b[row + wx];
                        mu_a += wt * av;
                        mu_b += wt * bv;
                        aa += wt * av * av;
                        bb += wt * bv * bv;
                        ab += wt * av * bv;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                row_sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
            row_sum
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}

/// Pixel rectangle for no-reference region statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Region { x0, y0, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.area() < 4 {
            return Err(Error::InvalidParam(format!(
                "region {self:?} has area {} (< 4 pixels)",
                self.area()
            )));
        }
        if self.x0 + self.width > w || self.y0 + self.height > h {
            return Err(Error::InvalidParam(format!(
                "region {self:?} does not fit inside a {h}x{w} image"
            )));
        }
        Ok(())
    }
}

fn region_stats<S: Scalar>(img: &Tensor<S>, region: &Region) -> Result<(f64, f64)> {
    let (data, h, w) = flat_image(img)?;
    region.validate(h, w)?;
    let n = region.area() as f64;
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in region.y0..region.y0 + region.height {
        for x in region.x0..region.x0 + region.width {
            let v = data[y * w + x];
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mean = sum / n;
    // A constant region has exactly zero variance; computing it through the
    // rounded mean would leave ~1e-33 of dust and break the +inf sentinel.
    if lo == hi {
        return Ok((lo, 0.0));
    }
    let mut var = 0.0;
    for y in region.y0..region.y0 + region.height {
        for x in region.x0..region.x0 + region.width {
            let d = data[y * w + x] - mean;
            var += d * d;
        }
    }
    Ok((mean, var / n))
}

/// Equivalent number of looks: `mean^2 / variance` (population variance).
/// A perfectly flat region reports +infinity.
pub fn enl<S: Scalar>(img: &Tensor<S>, region: &Region) -> Result<f64> {
    let (mean, var) = region_stats(img, region)?;
    if var == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(mean * mean / var)
}

/// Coefficient of variation: `std / mean` (population std).
pub fn cx<S: Scalar>(img: &Tensor<S>, region: &Region) -> Result<f64> {
    let (mean, var) = region_stats(img, region)?;
    if mean == 0.0 {
        return Err(Error::Data(format!(
            "cx: region {region:?} has zero mean intensity"
        )));
    }
    Ok(var.sqrt() / mean)
}

#[derive(Debug, Clone)]
pub struct PairEval {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct RegionEval {
    pub label: String,
    pub region: Region,
    pub enl: f64,
    pub cx: f64,
}

/// Per-image and per-region results plus their arithmetic-mean aggregates.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub pairs: Vec<PairEval>,
    pub regions: Vec<RegionEval>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.pairs.iter().map(|p| p.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.pairs.iter().map(|p| p.ssim))
    }

    pub fn mean_enl(&self) -> f64 {
        mean(self.regions.iter().map(|r| r.enl))
    }

    pub fn mean_cx(&self) -> f64 {
        mean(self.regions.iter().map(|r| r.cx))
    }

    /// Human-readable aligned table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        if !self.pairs.is_empty() {
            let _ = writeln!(s, "{:<16} {:>10} {:>10}", "pair", "psnr_db", "ssim");
            for p in &self.pairs {
                let _ = writeln!(s, "{:<16} {:>10.4} {:>10.6}", p.id, p.psnr, p.ssim);
            }
            let _ = writeln!(
                s,
                "{:<16} {:>10.4} {:>10.6}",
                "mean",
                self.mean_psnr(),
                self.mean_ssim()
            );
        }
        if !self.regions.is_empty() {
            let _ = writeln!(
                s,
                "{:<16} {:>20} {:>10} {:>10}",
                "region", "rect(x0,y0,w,h)", "enl", "cx"
            );
            for r in &self.regions {
                let rect = format!(
                    "({},{},{},{})",
                    r.region.x0, r.region.y0, r.region.width, r.region.height
                );
                let _ = writeln!(s, "{:<16} {:>20} {:>10.4} {:>10.6}", r.label, rect, r.enl, r.cx);
            }
            let _ = writeln!(
                s,
                "{:<16} {:>20} {:>10.4} {:>10.6}",
                "mean",
                "",
                self.mean_enl(),
                self.mean_cx()
            );
        }
        s
    }

    /// Machine-readable key=value lines.
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let _ = writeln!(s, "pair.{}.psnr={:.6}", p.id, p.psnr);
            let _ = writeln!(s, "pair.{}.ssim={:.6}", p.id, p.ssim);
        }
        if !self.pairs.is_empty() {
            let _ = writeln!(s, "aggregate.psnr.mean={:.6}", self.mean_psnr());
            let _ = writeln!(s, "aggregate.ssim.mean={:.6}", self.mean_ssim());
        }
        for r in &self.regions {
            let _ = writeln!(s, "region.{}.enl={:.6}", r.label, r.enl);
            let _ = writeln!(s, "region.{}.cx={:.6}", r.label, r.cx);
        }
        if !self.regions.is_empty() {
            let _ = writeln!(s, "aggregate.enl.mean={:.6}", self.mean_enl());
            let _ = writeln!(s, "aggregate.cx.mean={:.6}", self.mean_cx());
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Evaluate (estimate, reference) pairs; parallel over images.
pub fn evaluate_pairs<S: Scalar>(
    items: &[(String, Tensor<S>, Tensor<S>)],
    peak: f64,
) -> Result<EvalReport> {
    let pairs = items
        .par_iter()
        .map(|(id, est, reference)| {
            Ok(PairEval {
                id: id.clone(),
                psnr: psnr(est, reference, peak)?,
                ssim: ssim(est, reference, peak)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        pairs,
        regions: Vec::new(),
    })
}

/// Evaluate labeled homogeneous regions of one image.
pub fn evaluate_regions<S: Scalar>(
    img: &Tensor<S>,
    regions: &[(String, Region)],
) -> Result<EvalReport> {
    let regions = regions
        .iter()
        .map(|(label, region)| {
            Ok(RegionEval {
                label: label.clone(),
                region: *region,
                enl: enl(img, region)?,
                cx: cx(img, region)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        pairs: Vec::new(),
        regions,
    })
}

/// Region list file: one region per line, `label x0 y0 width height`,
/// comma or whitespace separated; `#` starts a comment.
pub fn parse_region_file(text: &str) -> Result<Vec<(String, Region)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "region file line {}: expected 'label x0 y0 width height', got '{line}'",
                lineno + 1
            )));
        }
        let num = |i: usize, what: &str| -> Result<usize> {
            fields[i].parse().map_err(|_| {
                Error::Data(format!(
                    "region file line {}: bad {what} '{}'",
                    lineno + 1,
                    fields[i]
                ))
            })
        };
        out.push((
            fields[0].to_string(),
            Region::new(num(1, "x0")?, num(2, "y0")?, num(3, "width")?, num(4, "height")?),
        ));
    }
    if out.is_empty() {
        return Err(Error::Data("region file lists no regions".into()));
    }
    Ok(out)
}
