use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cagan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cagan"))
        .args(args)
        .env("CAGAN_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn synth(dir: &Path, count: &str) {
    let out = cagan(&["synth-data", "--out", path(dir), "--count", count, "--resolution", "64x48", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_data_writes_pairs_and_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, "8");
    let manifest = fs::read_to_string(d.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 8);
    for sub in ["humans", "articles", "masks"] {
        assert_eq!(fs::read_dir(d.join(sub)).unwrap().count(), 8, "{sub}");
    }
    assert!(d.join("toy.json").is_file());
}

#[test]
fn train_swap_grid_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let run = tmp.path().join("run1");
    synth(&d, "8");
    let out = cagan(&[
        "train", "--data", path(&d), "--out", path(&run), "--steps", "5", "--batch", "2", "--resolution", "64x48",
        "--seed", "1", "--base-channels", "8", "--depth", "4", "--disc-channels", "8",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let ckpt = run.join("final.cagan");
    assert!(ckpt.is_file());

    let composite = tmp.path().join("swap.png");
    let alpha = tmp.path().join("alpha.png");
    let out = cagan(&[
        "swap", "--checkpoint", path(&ckpt),
        "--human", path(&d.join("humans/pair0000.png")),
        "--old-article", path(&d.join("articles/pair0000.png")),
        "--new-article", path(&d.join("articles/pair0001.png")),
        "--out", path(&composite), "--alpha-out", path(&alpha),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(composite.is_file() && alpha.is_file());

    let grid = tmp.path().join("grid.png");
    let out = cagan(&[
        "grid", "--checkpoint", path(&ckpt), "--data", path(&d), "--mode", "triplet-rows",
        "--items", "pair0000:pair0001,pair0002:pair0003,pair0004:pair0005", "--alpha", "--out", path(&grid),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let png = fs::read(&grid).unwrap();
    // IHDR width and height, big-endian, at bytes 16..24.
    let width = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(png[20..24].try_into().unwrap());
    assert_eq!((width, height), (5 * 64 + 6 * 2, 3 * 48 + 4 * 2));

    let report = tmp.path().join("eval.json");
    let out = cagan(&[
        "eval", "--checkpoint", path(&ckpt), "--data", path(&d), "--samples", "4", "--seed", "0", "--out", path(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    for key in ["alpha_iou", "color_swap_error", "cycle_error", "identity_leakage", "n_samples"] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
}

#[test]
fn train_without_data_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run1");
    let out = cagan(&["train", "--out", path(&run), "--steps", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert!(!run.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn invalid_values_fail_before_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let out = cagan(&["synth-data", "--out", path(&d), "--resolution", "60x48"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.exists());
    let out = cagan(&["synth-data", "--out", path(&d), "--resolution", "sixty"]);
    assert_eq!(out.status.code(), Some(1));
    let run = tmp.path().join("run");
    let out = cagan(&["train", "--data", path(&d), "--out", path(&run), "--lr", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.exists());
}

#[test]
fn unknown_commands_and_flags_exit_one_help_exits_zero() {
    assert_eq!(cagan(&["paint"]).status.code(), Some(1));
    assert_eq!(cagan(&["synth-data", "--out", "x", "--colour", "red"]).status.code(), Some(1));
    assert_eq!(cagan(&[]).status.code(), Some(1));
    let help = cagan(&["train", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--gamma-i"));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("bogus.cagan");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let d = tmp.path().join("d");
    synth(&d, "4");
    let out = cagan(&[
        "eval", "--checkpoint", path(&bogus), "--data", path(&d), "--out", path(&tmp.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
