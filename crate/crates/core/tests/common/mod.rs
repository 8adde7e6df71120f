//! Shared fixtures: unique temp dirs and a deterministic synthetic corpus of
//! piecewise-smooth grayscale images (gradient background, soft blobs, one
//! flat rectangle useful as a homogeneous region).
//!
//! Each test binary compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use despeckler_core::io::write_png_preview;
use despeckler_core::rng::SplitMix64;
use despeckler_core::Tensor64;

static COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "despeckler-test-{tag}-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// One clean synthetic image in [0.05, 0.95].
pub fn synth_image(index: u64, size: usize) -> Vec<f64> {
    let mut rng = SplitMix64::derive(0xC0FFEE, &[index]);
    let s = size as f64;
    let gx = rng.next_f64() * 0.4 - 0.2;
    let gy = rng.next_f64() * 0.4 - 0.2;
    let base = 0.3 + 0.3 * rng.next_f64();
    let mut img = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            img[y * size + x] = base + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5);
        }
    }
    for _ in 0..3 {
        let cx = rng.next_f64() * s;
        let cy = rng.next_f64() * s;
        let amp = rng.next_f64() * 0.5 - 0.25;
        let sigma = s * (0.08 + 0.12 * rng.next_f64());
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                img[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    // A flat rectangle in the lower-right quadrant.
    let flat = 0.25 + 0.5 * rng.next_f64();
    for y in size * 5 / 8..size * 7 / 8 {
        for x in size * 5 / 8..size * 7 / 8 {
            img[y * size + x] = flat;
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.05, 0.95);
    }
    img
}

/// Write `count` synthetic PNGs into a fresh corpus directory.
pub fn synth_corpus(tag: &str, count: usize, size: usize) -> PathBuf {
    let dir = tmpdir(tag);
    for i in 0..count {
        let img = synth_image(i as u64, size);
        let t = Tensor64::from_vec(vec![1, size, size], img).unwrap();
        write_png_preview(&dir.join(format!("img{i:03}.png")), &t).unwrap();
    }
    dir
}
