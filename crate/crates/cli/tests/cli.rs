use std::path::Path;
use std::process::{Command, Output};

use kpbench_core::evaluation::parse_report_csv;

fn kpbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpbench"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kpbench(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200", "--seed", "7", "--out", "a.csv"]);
    ok(d, &["synth", "--n", "200", "--seed", "7", "--out", "b.csv"]);
    ok(d, &["synth", "--n", "200", "--seed", "8", "--out", "c.csv"]);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert!(d.join("a.csv.manifest.json").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["synth", "--n", "3", "--out", "x.csv", "--bogus"],
        &["grid", "--models", "resnet", "--data", "d.csv", "--out", "r.csv"],
        &["train", "--data", "d.csv", "--out", "w.bin"],
    ] {
        let out = kpbench(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let v = ok(dir.path(), &["--version"]);
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn pipeline_errors_exit_1_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = kpbench(
        d,
        &["impute", "--method", "knn", "--in", "missing.csv", "--out", "o.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    std::fs::write(d.join("bad.csv"), "not,a,dataset\n1,2,3\n").unwrap();
    let out = kpbench(
        d,
        &["train", "--model", "manual", "--data", "bad.csv", "--out", "w.bin"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));

    ok(d, &["synth", "--n", "20", "--seed", "1", "--out", "d.csv"]);
    std::fs::write(d.join("w.bin"), b"KPBW\x01\x00").unwrap();
    let out = kpbench(
        d,
        &[
            "bench",
            "--weights",
            "w.bin",
            "--model",
            "manual",
            "--data",
            "d.csv",
            "--out",
            "r.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w.bin"));
}

#[test]
fn grid_rows_are_the_cartesian_product() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--n",
            "30",
            "--seed",
            "2",
            "--missing",
            "0.3",
            "--out",
            "d.csv",
        ],
    );
    ok(
        d,
        &[
            "grid",
            "--data",
            "d.csv",
            "--models",
            "manual,mobilenetv2",
            "--imputes",
            "none,knn",
            "--k",
            "2",
            "--augment",
            "on,off",
            "--epochs",
            "1",
            "--variants",
            "1",
            "--reps",
            "3",
            "--warmup",
            "0",
            "--out",
            "report.csv",
        ],
    );
    let rows = parse_report_csv(std::fs::File::open(d.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    let mut keys: Vec<_> = rows
        .iter()
        .map(|r| (r.model.clone(), r.impute.clone(), r.augment.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 8);
    assert!(rows
        .iter()
        .all(|r| r.reps == 3 && r.rmse_px.is_finite() && r.sec_per_100 > 0.0));
    let table = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(table.contains("augmented no worse in"), "{table}");
    assert!(d.join("report.csv.manifest.json").is_file());
}

#[test]
fn train_then_bench_uses_the_spec_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "24", "--seed", "5", "--out", "d.csv"]);
    ok(
        d,
        &[
            "train", "--model", "manual", "--data", "d.csv", "--epochs", "1", "--out", "w.bin",
        ],
    );
    ok(
        d,
        &[
            "bench",
            "--weights",
            "w.bin",
            "--data",
            "d.csv",
            "--reps",
            "3",
            "--warmup",
            "0",
            "--out",
            "r.csv",
        ],
    );
    let rows = parse_report_csv(std::fs::File::open(d.join("r.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].model, "manual");
    assert_eq!(rows[0].params_total, 249_694);
    assert_eq!(rows[0].size_bytes, std::fs::metadata(d.join("w.bin")).unwrap().len());
}

#[test]
fn replay_detects_changed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "10", "--seed", "3", "--out", "d.csv"]);
    ok(d, &["replay", "d.csv.manifest.json"]);

    let path = d.join("d.csv.manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&path, m.to_string()).unwrap();
    let out = kpbench(d, &["replay", "d.csv.manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d.csv"));
}

#[test]
fn model_describe_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["model", "describe", "mobilenetv2"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("trunk params: 2257984"), "{text}");
    let out = ok(dir.path(), &["model", "describe", "baseline"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("total params: 1864926"));
}
