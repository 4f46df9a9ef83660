use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfcd_core::codec::{Frame, RawVideo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mfcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfcd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mfcd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The value of `key=value` in the results part of the output.
fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    let results = stdout.split_once("\n\n").expect("echo then results").1;
    results
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {results}"))
}

fn random_video(seed: u64, frames: usize) -> RawVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..frames)
        .map(|_| Frame::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap())
        .collect();
    RawVideo::new(frames).unwrap()
}

#[test]
fn decode_after_encode_restores_the_raw_file() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, frames) in [(1, 24), (2, 17), (3, 1)] {
        let raw = dir.path().join(format!("v{seed}.mfrv"));
        let stream = dir.path().join(format!("v{seed}.mfcs"));
        let back = dir.path().join(format!("v{seed}.back.mfrv"));
        fs::write(&raw, mfcd::video::to_bytes(&random_video(seed, frames)).unwrap()).unwrap();
        let enc = ok(&["encode", path(&raw), "--out", path(&stream)]);
        assert_eq!(field(&enc, "gops"), frames.div_ceil(12).to_string());
        ok(&["decode", path(&stream), "--out", path(&back)]);
        assert_eq!(fs::read(&raw).unwrap(), fs::read(&back).unwrap(), "seed {seed}");
    }
}

#[test]
fn eval_of_an_untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = ok(&["synth", "--seed", "3", "--out", path(&data)]);
    assert_eq!(field(&synth, "samples"), "512");
    assert_eq!(field(&synth, "per_class"), "64,64,64,64,64,64,64,64");
    let out = ok(&["eval", path(&data), "--seed", "11"]);
    let table = out.split_once("\n\n").unwrap().1;
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("format,videos,passes,accuracy"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let formats: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(formats, ["FULL", "I_PLUS_RES", "RES_ONLY", "RAW"]);
    for r in &rows {
        assert_eq!(r[1], "512");
        let acc: f64 = r[3].parse().unwrap();
        assert!((acc - 0.125).abs() <= 0.08, "{} accuracy {acc}", r[0]);
    }
}

#[test]
fn subcommands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(
        &cfg,
        "# tiny run\nsamples_per_class=3\nepochs=2\nstage_widths=4,8\nfibers=2\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let run = |d: &Path| {
        let cfg = path(&cfg);
        let synth = ok(&["synth", "--config", cfg, "--out", path(&d.join("data"))]);
        let teach = ok(&[
            "train-teacher",
            path(&d.join("data")),
            "--config",
            cfg,
            "--out",
            path(d),
        ]);
        let plain = ok(&[
            "train-plain",
            path(&d.join("data")),
            "--config",
            cfg,
            "--format",
            "res",
            "--out",
            path(d),
        ]);
        let dist = ok(&[
            "distill",
            path(&d.join("data")),
            path(&d.join("teacher.mfcdw")),
            "--config",
            cfg,
            "--workers",
            "2",
            "--out",
            path(d),
        ]);
        let eval = ok(&[
            "eval",
            path(&d.join("data")),
            path(&d.join("distilled.mfcdw")),
            "--config",
            cfg,
            "--format",
            "full",
            "--clips-per-video",
            "15",
        ]);
        (synth, teach, plain, dist, eval)
    };
    let first = run(&a);
    assert_eq!(first, run(&b));
    assert!(
        first.1.contains("\nepochs=2\n") && first.1.contains("\nlr=0.005\n"),
        "{}",
        first.1
    );
    assert!(first.4.contains("\nFULL,24,360,"), "{}", first.4);
    for name in [
        "teacher.mfcdw",
        "teacher.csv",
        "plain_res.mfcdw",
        "distilled.mfcdw",
        "distilled.txt",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn xform_writes_one_clip_per_complete_gop() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("v.mfrv");
    fs::write(&raw, mfcd::video::to_bytes(&random_video(9, 30)).unwrap()).unwrap();
    let out = ok(&[
        "xform",
        path(&raw),
        "--format",
        "ires",
        "--out",
        path(&dir.path().join("clips")),
    ]);
    assert_eq!(field(&out, "clips"), "2");
    assert!(out.contains("skipped gop 2: 6 frames"));
    let bytes = fs::read(dir.path().join("clips/clip_001_ires.mfct")).unwrap();
    let clip = mfcd::clip::from_bytes(&bytes).unwrap();
    assert_eq!(clip.shape(), [3, 12, 32, 32]);
}

#[test]
fn flops_reports_per_clip_and_per_video_cost() {
    let out = ok(&["flops", "--clips-per-video", "15", "--per-clip-gflops", "8.53"]);
    assert_eq!(field(&out, "per_video_gflops"), "127.95");
    let out = ok(&[
        "flops",
        "--clips-per-video",
        "25",
        "--crops",
        "30",
        "--per-clip-gflops",
        "1.4",
    ]);
    assert_eq!(field(&out, "passes"), "750");
    assert_eq!(field(&out, "per_video_gflops"), "1050");
    let out = ok(&["flops", "--clips-per-video", "10"]);
    let per_clip: u64 = field(&out, "model_flops_per_clip").parse().unwrap();
    assert_eq!(field(&out, "params"), "45464");
    let total: f64 = field(&out, "per_video_gflops").parse().unwrap();
    assert!((total - 10.0 * per_clip as f64 / 1e9).abs() < 1e-6);
}

#[test]
fn failures_use_distinct_exit_codes_and_one_line() {
    let usage = mfcd(&["encode"]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));
    assert_eq!(mfcd(&["flops", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(
        mfcd(&["train-plain", "d", "--format", "yuv", "--out", "o"])
            .status
            .code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.mfcs");
    fs::write(&junk, b"MFCS\x01\x00\x20\x00").unwrap();
    let bad = mfcd(&["decode", path(&junk), "--out", path(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8(bad.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains("byte 8"), "{err}");
    assert_eq!(
        mfcd(&["eval", path(&dir.path().join("missing"))]).status.code(),
        Some(1)
    );
}
