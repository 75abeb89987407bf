use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fsc_core::geom::ply::read_cloud;

fn fsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsc")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A four-shape dataset and a two-step checkpoint.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let gen = fsc(
        dir.path(),
        &["gen", "--toy", "4", "--out", "d", "--gt-points", "512", "--partial", "128", "--levels", "64,32", "--coarse", "64", "--split", "0.5,0,0.5"],
    );
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    let train = fsc(dir.path(), &["train", "--data", "d", "--steps", "2", "--ckpt-out", "s.ckpt", "--batch-size", "2", "--levels", "64"]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    dir
}

fn some_partial(root: &Path) -> String {
    let sample = fs::read_dir(root.join("d/test")).unwrap().next().unwrap().unwrap().path();
    sample.join("partial_64.ply").strip_prefix(root).unwrap().display().to_string()
}

#[test]
fn eval_without_a_dataset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsc(dir.path(), &["eval", "--ckpt", "x.ckpt", "--data", "missing", "--out", "r.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest not found"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fsc(dir.path(), &["gen", "--bogus"])), 2);
    assert_eq!(code(&fsc(dir.path(), &["nonsense"])), 2);
}

#[test]
fn complete_writes_a_deterministic_cloud() {
    let ws = workspace();
    let root = ws.path();
    let input = some_partial(root);
    for out in ["a.ply", "b.ply"] {
        let o = fsc(root, &["complete", "--ckpt", "s.ckpt", "--input", &input, "--output", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read(root.join("a.ply")).unwrap();
    assert_eq!(a, fs::read(root.join("b.ply")).unwrap());
    // tiny preset: 64 coarse points on a 2x2 patch
    assert_eq!(read_cloud(&root.join("a.ply")).unwrap().len(), 256);

    fs::write(root.join("empty.ply"), "").unwrap();
    let o = fsc(root, &["complete", "--ckpt", "s.ckpt", "--input", "empty.ply", "--output", "e.ply"]);
    assert_eq!(code(&o), 2);
    fs::write(
        root.join("zero.ply"),
        "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    )
    .unwrap();
    let o = fsc(root, &["complete", "--ckpt", "s.ckpt", "--input", "zero.ply", "--output", "e.ply"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty"));

    fs::write(root.join("g.ckpt"), "garbage").unwrap();
    let o = fsc(root, &["complete", "--ckpt", "g.ckpt", "--input", &input, "--output", "e.ply"]);
    assert_eq!(code(&o), 3);
    assert!(!root.join("e.ply").exists());
}

#[test]
fn eval_reports_every_level() {
    let ws = workspace();
    let root = ws.path();
    let o = fsc(root, &["eval", "--ckpt", "s.ckpt", "--data", "d", "--out", "r.csv", "--svg", "r.svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(root.join("r.csv")).unwrap();
    let overall: Vec<&str> = csv.lines().filter(|l| l.split(',').nth(1) == Some("all")).collect();
    assert_eq!(overall.len(), 3);
    for (line, res) in overall.iter().zip(["128", "64", "32"]) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[0], f[2]), (res, "2"));
        assert!(f[3..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    assert!(fs::read_to_string(root.join("r.svg")).unwrap().starts_with("<svg"));

    let o = fsc(root, &["eval", "--ckpt", "s.ckpt", "--data", "d", "--out", "r.json", "--no-emd", "--levels", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("r.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert!(rows.iter().all(|r| r["resolution"] == 32 && r["emd"].is_null()));
}

#[test]
fn entropy_writes_one_row_per_size() {
    let ws = workspace();
    let root = ws.path();
    let o = fsc(
        root,
        &["entropy", "--data", "d", "--sizes", "512,128,32", "--trials", "2", "--radius", "0.2", "--out", "e.csv", "--svg", "e.svg"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(root.join("e.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), vec![512, 128, 32]);
    assert!(rows.iter().all(|r| (0.0..=1.2).contains(&r[2])));
    let svg = fs::read_to_string(root.join("e.svg")).unwrap();
    assert!(svg.contains(">points<") && svg.contains(">entropy fraction<"));
}
