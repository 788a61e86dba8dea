use std::path::Path;
use std::process::{Command, Output};

fn rknet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rknet")).args(args).output().expect("spawn rknet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("squares.csv");
    let out = rknet(&["gen", "--dataset", "squares_2d", "--n", "120", "--seed", "3", "--out", p(&csv)]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 121);

    let run = dir.path().join("run");
    let out = rknet(&[
        "train", "--csv", p(&csv), "--arch", "euler", "--width", "4", "--depth", "4", "--epochs", "3", "--seed", "1",
        "--out", p(&run),
    ]);
    assert!(out.status.success(), "{out:?}");
    for f in ["config.json", "metrics-rep0.csv", "model-rep0.bin", "model-rep0.json", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics-rep0.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let last: Vec<f64> = metrics.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();

    let ckpt = run.join("model-rep0.bin");
    let out = rknet(&["eval", "--checkpoint", p(&ckpt), "--run-dir", p(&run)]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(value(&text, "samples"), 24.0);
    assert!((value(&text, "accuracy") - last[2]).abs() <= 1e-12);
    assert!((value(&text, "cost") - last[4]).abs() <= 1e-12);

    // The same run re-read from its own config reproduces the metrics.
    let again = dir.path().join("again");
    let out = rknet(&["train", "--config", p(&run.join("config.json")), "--out", p(&again)]);
    assert!(out.status.success(), "{out:?}");
    let strip = |s: &str| -> Vec<String> {
        s.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string()).collect()
    };
    let second = std::fs::read_to_string(again.join("metrics-rep0.csv")).unwrap();
    assert_eq!(strip(&metrics), strip(&second));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rknet(&["gen", "--dataset", "moons", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = rknet(&["train", "--csv", p(&dir.path().join("missing.csv")), "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = rknet(&["train", "--dataset", "spiral", "--width", "2", "--out", p(&dir.path().join("r2"))]);
    assert_eq!(out.status.code(), Some(2), "RK without augmentation needs --allow-node");
    let out = rknet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
