//! End-to-end exercise of the `despeckler` binary: simulate -> train ->
//! despeckle -> evaluate -> info, plus exit-code and idempotence contracts.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_despeckler"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("despeckler-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Deterministic 8-bit grayscale PNGs, written without despeckler-core help
/// so the CLI is exercised end to end from plain files.
fn write_corpus(dir: &Path, count: usize, size: usize) {
    for i in 0..count {
        let mut img = image::GrayImage::new(size as u32, size as u32);
        for y in 0..size {
            for x in 0..size {
                let fx = x as f64 / size as f64;
                let fy = y as f64 / size as f64;
                let v = 0.35
                    + 0.3 * ((i as f64 + 1.0) * 2.1 * fx).sin() * fy
                    + 0.2 * fx
                    + if x > size / 2 && y > size / 2 { 0.15 } else { 0.0 };
                img.put_pixel(x as u32, y as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0) as u8]));
            }
        }
        img.save(dir.join(format!("img{i:02}.png"))).unwrap();
    }
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn despeckler");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn despeckler").status.code().unwrap_or(-1)
}

#[test]
fn full_pipeline_round_trip() {
    let root = tmpdir("pipeline");
    let corpus = root.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    write_corpus(&corpus, 8, 48);

    // simulate
    let data = root.join("data");
    let stdout = run_ok(bin().args([
        "simulate",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--looks",
        "1",
        "--patch",
        "32",
        "--split",
        "5,2",
        "--seed",
        "9",
    ]));
    assert!(stdout.contains("5 train + 2 val"), "{stdout}");
    let manifest = data.join("manifest.txt");
    assert!(manifest.exists());

    // train (tiny run: desk preset shrunk by flags)
    let run_dir = root.join("run");
    let stdout = run_ok(bin().args([
        "train",
        "--preset",
        "desk",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--epochs",
        "2",
        "--val-every",
        "1",
        "--checkpoint-every",
        "1",
        "--seed",
        "5",
    ]));
    assert!(stdout.contains("done:"), "{stdout}");
    let ckpt = run_dir.join("checkpoint-best.ckpt");
    assert!(ckpt.exists());
    assert!(run_dir.join("metrics.log").exists());
    let resolved = std::fs::read_to_string(run_dir.join("train.config")).unwrap();
    assert!(resolved.contains("epochs = 2") && resolved.contains("seed = 5"), "{resolved}");

    // despeckle a divisible input
    let out_images = root.join("despeckled");
    let speckled_png = data.join("previews/val-0000-speckled.png");
    run_ok(bin().args([
        "despeckle",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        speckled_png.to_str().unwrap(),
        "--out",
        out_images.to_str().unwrap(),
    ]));
    assert!(out_images.join("val-0000-speckled-despeckled.ten").exists());
    assert!(out_images.join("val-0000-speckled-despeckled.png").exists());

    // despeckle an indivisible input: fails without --pad, works with it
    let odd = root.join("odd.png");
    let img = image::GrayImage::from_pixel(50, 50, image::Luma([128]));
    img.save(&odd).unwrap();
    let code = exit_code(bin().args([
        "despeckle",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        odd.to_str().unwrap(),
        "--out",
        out_images.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "dimension mismatch without --pad is a data error");
    run_ok(bin().args([
        "despeckle",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        odd.to_str().unwrap(),
        "--out",
        out_images.to_str().unwrap(),
        "--pad",
        "reflect",
    ]));
    let padded_out = despeckler_core::io::read_tensor::<f32>(
        &out_images.join("odd-despeckled.ten"),
    )
    .unwrap();
    assert_eq!(padded_out.shape(), &[1, 50, 50]);

    // evaluate: paired mode over the val split
    let reports = root.join("reports");
    let stdout = run_ok(bin().args([
        "evaluate",
        "--mode",
        "paired",
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "val",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ]));
    assert!(stdout.contains("baseline speckled"), "{stdout}");
    assert!(stdout.contains("aggregate: mean PSNR"), "{stdout}");
    let kv = std::fs::read_to_string(reports.join("report.kv")).unwrap();
    assert_eq!(kv.matches("pair.val-").count(), 4, "2 pairs x psnr+ssim: {kv}");

    // evaluate: region mode on the flat quadrant of a speckled image
    let regions = root.join("regions.txt");
    std::fs::write(&regions, "flat 20 20 10 10\n").unwrap();
    let stdout = run_ok(bin().args([
        "evaluate",
        "--mode",
        "region",
        "--inputs",
        speckled_png.to_str().unwrap(),
        "--regions",
        regions.to_str().unwrap(),
    ]));
    assert!(stdout.contains("aggregate: mean ENL"), "{stdout}");

    // info on all three artifact kinds
    let stdout = run_ok(bin().args(["info", "--checkpoint", ckpt.to_str().unwrap()]));
    assert!(stdout.contains("parameters: 159985"), "{stdout}");
    let stdout = run_ok(bin().args(["info", "--manifest", manifest.to_str().unwrap()]));
    assert!(stdout.contains("5 train + 2 val"), "{stdout}");
    let stdout = run_ok(bin().args([
        "info",
        "--tensor",
        data.join("clean/val-0000.ten").to_str().unwrap(),
    ]));
    assert!(stdout.contains("shape: [1, 32, 32]"), "{stdout}");

    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn simulate_is_idempotent_per_seed() {
    let root = tmpdir("idempotent");
    let corpus = root.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    write_corpus(&corpus, 4, 40);
    for name in ["a", "b"] {
        run_ok(bin().args([
            "simulate",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            root.join(name).to_str().unwrap(),
            "--patch",
            "32",
            "--split",
            "3,1",
            "--seed",
            "11",
        ]));
    }
    let a = std::fs::read(root.join("a/manifest.txt")).unwrap();
    let b = std::fs::read(root.join("b/manifest.txt")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(root.join("a/speckled/train-0000.ten")).unwrap();
    let b = std::fs::read(root.join("b/speckled/train-0000.ten")).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn exit_codes_follow_the_contract() {
    // Usage error: unknown flag.
    assert_eq!(exit_code(bin().args(["simulate", "--bogus"])), 1);
    // Usage error: bad subcommand.
    assert_eq!(exit_code(bin().args(["frobnicate"])), 1);
    // Help is a success.
    assert_eq!(exit_code(bin().args(["--help"])), 0);
    assert_eq!(exit_code(bin().args(["train", "--help"])), 0);
    // Data error: missing corpus directory.
    let root = tmpdir("exitcodes");
    assert_eq!(
        exit_code(bin().args([
            "simulate",
            "--corpus",
            root.join("nope").to_str().unwrap(),
            "--out",
            root.join("out").to_str().unwrap(),
        ])),
        2
    );
    // Usage error: invalid training config values, all reported at once.
    let out = bin()
        .args([
            "train",
            "--manifest",
            root.join("missing-manifest.txt").to_str().unwrap(),
            "--out",
            root.join("run").to_str().unwrap(),
            "--lr=-1",
            "--epochs",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lr") && stderr.contains("epochs"), "{stderr}");
    std::fs::remove_dir_all(&root).ok();
}
