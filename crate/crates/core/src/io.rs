//! File formats: float tensor images (.ten), grayscale PNG/PGM ingestion,
//! and 8-bit PNG previews.
//!
//! The .ten format is a 16-byte header of four little-endian u32 words —
//! magic `TEN1`, dtype code (1 = f32, 2 = f64), H, W — followed by the
//! row-major pixel data, little-endian. Dataset pairs are always written
//! as f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const TEN_MAGIC: u32 = u32::from_le_bytes(*b"TEN1");

/// Write a `[1,H,W]` (or `[H,W]`) tensor in its native precision.
pub fn write_tensor<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let (h, w) = image_dims(t)?;
    let data = t.data();
    let mut bytes = Vec::with_capacity(16 + data.len() * S::DTYPE.size_bytes());
    bytes.extend_from_slice(&TEN_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(S::DTYPE.code() as u32).to_le_bytes());
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for &v in data.iter() {
        v.write_le(&mut bytes);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a .ten file as `[1,H,W]`, converting the stored precision to `S`.
pub fn read_tensor<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap());
    if word(0) != TEN_MAGIC {
        return Err(Error::Data(format!(
            "{}: not a .ten tensor file (bad magic)",
            path.display()
        )));
    }
    let dtype = Dtype::from_code(word(1) as u8).ok_or_else(|| {
        Error::Data(format!("{}: unknown dtype code {}", path.display(), word(1)))
    })?;
    let (h, w) = (word(2) as usize, word(3) as usize);
    if h == 0 || w == 0 {
        return Err(Error::Data(format!(
            "{}: degenerate dims {h}x{w}",
            path.display()
        )));
    }
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    let expected = h * w * dtype.size_bytes();
    if raw.len() != expected {
        return Err(Error::Data(format!(
            "{}: payload is {} bytes, expected {expected} for {h}x{w} {dtype:?}",
            path.display(),
            raw.len()
        )));
    }
    let data: Vec<S> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    Tensor::from_vec(vec![1, h, w], data)
}

/// Load a grayscale PNG or PGM (8- or 16-bit) normalized to [0,1] by the
/// format's max value. Color inputs are converted to luma first.
pub fn read_grayscale_image(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    Ok((data, h, w))
}

/// Load any supported input (.ten or PNG/PGM) as a `[1,H,W]` tensor.
pub fn read_image_any<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    if path.extension().and_then(|e| e.to_str()) == Some("ten") {
        return read_tensor(path);
    }
    let (data, h, w) = read_grayscale_image(path)?;
    Tensor::from_vec(vec![1, h, w], data.into_iter().map(S::from_f64).collect())
}

/// 8-bit PNG preview, values clamped to [0,1].
pub fn write_png_preview<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let (h, w) = image_dims(t)?;
    let data = t.data();
    let pixels: Vec<u8> = data
        .iter()
        .map(|v| {
            let c = v.as_f64().clamp(0.0, 1.0);
            (c * 255.0).round() as u8
        })
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .expect("pixel buffer matches dims");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write a plain text file, mapping IO failures to our error type.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn image_dims<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize)> {
    match t.shape() {
        [1, h, w] => Ok((*h, *w)),
        [h, w] => Ok((*h, *w)),
        other => Err(Error::shape(format!(
            "expected a [1,H,W] or [H,W] image tensor, got {other:?}"
        ))),
    }
}


/// Reflect-pad a `[1,H,W]` image on the bottom/right edges up to the next
/// multiple of `divisor`, mirroring without repeating the border pixel.
/// Returns the padded tensor plus the original extents for cropping back.
pub fn reflect_pad_to_multiple<S: Scalar>(
    t: &Tensor<S>,
    divisor: usize,
) -> Result<(Tensor<S>, usize, usize)> {
    let (h, w) = image_dims(t)?;
    let round_up = |n: usize| n.div_ceil(divisor) * divisor;
    let (hp, wp) = (round_up(h), round_up(w));
    if hp == h && wp == w {
        return Ok((t.detach(), h, w));
    }
    if hp - h > h - 1 || wp - w > w - 1 {
        return Err(Error::shape(format!(
            "cannot reflect-pad {h}x{w} to {hp}x{wp}: padding exceeds image extent"
        )));
    }
    let data = t.data();
    let mut out = vec![S::zero(); hp * wp];
    for y in 0..hp {
        let sy = if y < h { y } else { 2 * h - 2 - y };
        for x in 0..wp {
            let sx = if x < w { x } else { 2 * w - 2 - x };
            out[y * wp + x] = data[sy * w + sx];
        }
    }
    Ok((Tensor::from_vec(vec![1, hp, wp], out)?, h, w))
}

/// Crop a `[1,H,W]` image to its top-left `h x w` corner.
pub fn crop<S: Scalar>(t: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (th, tw) = image_dims(t)?;
    if h > th || w > tw {
        return Err(Error::shape(format!(
            "cannot crop {th}x{tw} to {h}x{w}"
        )));
    }
    let data = t.data();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&data[y * tw..y * tw + w]);
    }
    Tensor::from_vec(vec![1, h, w], out)
}

#[cfg(test)]
mod pad_tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let t = Tensor::<f64>::from_vec(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let (padded, h, w) = reflect_pad_to_multiple(&t, 4).unwrap();
        assert_eq!((h, w), (3, 3));
        assert_eq!(padded.shape(), &[1, 4, 4]);
        let d = padded.to_vec();
        // Row 3 mirrors row 1, column 3 mirrors column 1.
        assert_eq!(&d[0..4], &[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(&d[12..16], &[4.0, 5.0, 6.0, 5.0]);
        let back = crop(&padded, 3, 3).unwrap();
        assert_eq!(back.to_vec(), t.to_vec());
    }

    #[test]
    fn reflect_pad_noop_when_divisible() {
        let t = Tensor::<f64>::zeros(vec![1, 8, 8]).unwrap();
        let (p, _, _) = reflect_pad_to_multiple(&t, 4).unwrap();
        assert_eq!(p.shape(), &[1, 8, 8]);
    }

    #[test]
    fn reflect_pad_refuses_tiny_images() {
        let t = Tensor::<f64>::zeros(vec![1, 2, 2]).unwrap();
        assert!(reflect_pad_to_multiple(&t, 16).is_err());
    }
}
