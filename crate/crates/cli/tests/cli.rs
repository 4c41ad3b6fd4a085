use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pirate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pirate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pirate(&["run", "--config", s(&cfg), "--seed", "3", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "summary.json", "config.toml", "checkpoints/final.ckpt"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(a.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 3"), "{summary}");
    let ck = |d: &Path| fs::read(d.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(ck(&a), ck(&b));
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );

    let o = pirate(&["eval", "--out", s(&a)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("relative L2 error"));
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    assert!(pirate(&["run", "--config", s(&cfg), "--out", s(&full)]).status.success());
    assert!(pirate(&["run", "--config", s(&cfg), "--out", s(&part), "--max-steps", "40"])
        .status
        .success());
    assert!(!part.join("checkpoints/final.ckpt").exists());
    let o = pirate(&["resume", "--out", s(&part)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(full.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(part.join("checkpoints/final.ckpt")).unwrap()
    );
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = pirate(&["run", "--config", s(&cfg), "--out", s(dir.path()), "--override", "model.layers=4"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "benchmark = \"allen_cahn\"\nbogus = 1\n").unwrap();
    let o = pirate(&["run", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = pirate(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--override",
        "train.learning_rate=1e300",
        "--override",
        "train.warmup_steps=0",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("checkpoints/diverged.ckpt").exists());
}

#[test]
fn gen_reference_writes_dataset_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let (file, csv) = (dir.path().join("ac.ref"), dir.path().join("ac.csv"));
    let o = pirate(&["gen-reference", "--config", s(&cfg), "--out", s(&file), "--csv", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(file.exists());
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x,u0\n"));
    // 21 snapshots of 64 points
    assert_eq!(text.lines().count(), 1 + 21 * 64);
}

#[test]
fn variance_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = pirate(&[
        "variance-study",
        "--widths",
        "8,16",
        "--orders",
        "1,2",
        "--samples",
        "10",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("variance.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn deriv_regression_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = pirate(&[
        "deriv-regression",
        "--depths",
        "1",
        "--orders",
        "0,1",
        "--seeds",
        "1",
        "--width",
        "8",
        "--steps",
        "20",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("deriv_regression.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    let mut text = fs::read_to_string(smoke_config()).unwrap();
    text.push_str("\n[sweep]\n\"model.alpha_init\" = [0.0, 1.0]\n");
    fs::write(&cfg, text).unwrap();
    let o = pirate(&[
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--override",
        "train.steps=10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}
