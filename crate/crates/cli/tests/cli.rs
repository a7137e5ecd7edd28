use std::path::Path;
use std::process::{Command, Output};

fn fastboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastboost"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn total_params(report: &str) -> u64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix("total params: "))
        .expect("report has a total")
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn export_base_config() {
    let out = fastboost(&["export-config", "--variant", "base"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["expansions"], serde_json::json!([[2, 4, 6, 8], [2, 4, 6, 8], [2, 4, 6, 8]]));
    assert_eq!(v["stage_channels"], serde_json::json!([64, 128, 256]));
}

#[test]
fn analyze_exported_configs() {
    let dir = tempfile::tempdir().unwrap();
    for (variant, target) in [("tiny", 367_993.0), ("base", 852_393.0)] {
        let path = dir.path().join(format!("{variant}.json"));
        let p = path.to_str().unwrap();
        assert!(fastboost(&["export-config", "--variant", variant, "--out", p]).status.success());
        let out = fastboost(&["analyze", "--arch", p]);
        assert!(out.status.success());
        let text = stdout(&out);
        let params = total_params(&text) as f64;
        assert!((params / target - 1.0).abs() <= 0.10, "{variant}: {params}");
        assert!(text.contains("total MACs") && text.contains("convention"));
    }
}

#[test]
fn sweep_prints_csv() {
    let out = fastboost(&["analyze", "--sweep", "1-1-1-1,2-4-6-8"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pattern,layers,params,macs,flops");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1-1-1-1,4,") && lines[2].starts_with("2-4-6-8,4,"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["frobnicate"][..], &["analyze", "--bogus"], &["export-config"], &[]] {
        let out = fastboost(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(fastboost(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.fbckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = fastboost(&["eval", "--checkpoint", junk.to_str().unwrap(), "--data", "synthetic"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = dir.path().join("missing.json");
    let out = fastboost(&["analyze", "--arch", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let empty = dir.path().join("no_cifar_here");
    std::fs::create_dir(&empty).unwrap();
    let out = fastboost(&["train", "--data", empty.to_str().unwrap(), "--epochs", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = fastboost(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
}

fn small_arch(dir: &Path) -> String {
    let cfg = fastboost::gradcheck::miniature_config(fastboost::schedules::LambdaMode::Scheduled);
    let path = dir.join("mini.json");
    cfg.save(&path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let arch = small_arch(dir.path());
    let out_dir = dir.path().join("run");
    let out = fastboost(&[
        "train",
        "--arch",
        &arch,
        "--epochs",
        "2",
        "--batch",
        "16",
        "--synthetic-size",
        "32",
        "--no-wall-time",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epoch   1"));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = out_dir.join("final.fbckpt");
    let out = fastboost(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        "synthetic",
        "--synthetic-size",
        "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out);
    let acc: f64 = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("accuracy="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
