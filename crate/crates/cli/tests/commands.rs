//! Runs the built binary the way a user would.

use std::path::Path;
use std::process::{Command, Output};

use balquant::files;
use balquant_core::Tensor;

fn bq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balquant"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bq(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failing run printed exactly one `error: <kind>: ...` line.
fn fails(dir: &Path, args: &[&str], kind: &str, code: i32) {
    let out = bq(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error: {kind}: ")), "{err}");
}

#[test]
fn quantize_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "tensor",
            "--dist",
            "exponential",
            "--rows",
            "8",
            "--cols",
            "64",
            "--seed",
            "3",
            "--out",
            "in.tensor",
        ],
    );
    ok(d, &["quantize", "--bits", "2", "--mode", "balanced-mean", "in.tensor", "out.q"]);
    let report = ok(d, &["inspect", "out.q", "--csv", "h.csv"]);
    assert!(report.contains("kind quantized"));
    assert!(report.contains("mode balanced-mean"));
    let csv = std::fs::read_to_string(d.join("h.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("stage,bin_left,bin_right,count"));
    let total: u64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 512);
}

#[test]
fn balanced_exact_reports_two_bits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 4n distinct values.
    let t = Tensor::row((0..400).map(|i| ((i * 37) % 400) as f64 * 0.01 - 2.0).collect()).unwrap();
    files::save_tensor(&d.join("w.tensor"), &t).unwrap();
    ok(d, &["quantize", "--bits", "2", "--mode", "balanced-exact", "w.tensor", "w.q"]);
    let report = ok(d, &["inspect", "w.q"]);
    assert!(report.lines().any(|l| l == "effective_bitwidth 2.000"), "{report}");
}

#[test]
fn train_eval_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "blobs",
            "--n",
            "300",
            "--classes",
            "3",
            "--dim",
            "4",
            "--seed",
            "1",
            "--out",
            "d.ds",
        ],
    );
    std::fs::write(
        d.join("run.json"),
        r#"{"model": {"hidden": [16], "weight_bits": 2, "act_bits": 3}, "train": {"epochs": 4, "seed": 5}}"#,
    )
    .unwrap();
    let log = ok(
        d,
        &[
            "train",
            "--data",
            "d.ds",
            "--config",
            "run.json",
            "--out",
            "c.ckpt",
            "--metrics",
            "m.csv",
        ],
    );
    assert_eq!(log.lines().count(), 4);
    let metrics = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(metrics.starts_with("epoch,loss,accuracy,mean_eb,eb_layer0,eb_layer1\n"));

    let float = ok(d, &["eval", "--model", "c.ckpt", "--data", "d.ds"]);
    let fixed = ok(d, &["eval", "--model", "c.ckpt", "--data", "d.ds", "--path", "fixed"]);
    let acc = |s: &str| s.split_whitespace().skip_while(|w| *w != "accuracy").nth(1).unwrap().to_string();
    assert_eq!(acc(&float), acc(&fixed));

    ok(
        d,
        &["export-fixed", "--checkpoint", "c.ckpt", "--out", "m.fixed", "--exponent", "2"],
    );
    let exported = ok(d, &["eval", "--model", "m.fixed", "--data", "d.ds", "--path", "fixed"]);
    assert_eq!(acc(&exported), acc(&float));
    assert!(ok(d, &["inspect", "c.ckpt", "--csv", "h.csv"]).contains("mean_effective_bitwidth"));
    let hist = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(hist.starts_with("layer,stage,bin_left,bin_right,count\n"));
    assert!(hist.contains(",pre,") && hist.contains(",post,"));

    // Same seed and config from the command line: identical checkpoint bytes.
    ok(d, &["train", "--data", "d.ds", "--config", "run.json", "--out", "c2.ckpt"]);
    assert_eq!(std::fs::read(d.join("c.ckpt")).unwrap(), std::fs::read(d.join("c2.ckpt")).unwrap());

    // Two epochs, then two more from the checkpoint.
    ok(
        d,
        &[
            "train",
            "--data",
            "d.ds",
            "--config",
            "run.json",
            "--epochs",
            "2",
            "--out",
            "half.ckpt",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--data",
            "d.ds",
            "--resume",
            "half.ckpt",
            "--epochs",
            "4",
            "--out",
            "resumed.ckpt",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("c.ckpt")).unwrap(),
        std::fs::read(d.join("resumed.ckpt")).unwrap()
    );
}

#[test]
fn log_level_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "spirals", "--n", "200", "--out", "s.ds"]);
    let run = |level: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_balquant"))
            .current_dir(d)
            .env(balquant::LOG_ENV, level)
            .args(["train", "--data", "s.ds", "--epochs", "2", "--out", out])
            .output()
            .unwrap();
        assert!(o.status.success());
        o
    };
    let quiet = run("error", "a.ckpt");
    let loud = run("debug", "b.ckpt");
    assert!(quiet.stderr.is_empty());
    assert!(String::from_utf8_lossy(&loud.stderr).contains("epoch"));
    assert_eq!(quiet.stdout, loud.stdout);
    assert_eq!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
}

#[test]
fn bench_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["bench", "--sizes", "64,128", "--m-bits", "1,2", "--k-bits", "1", "--runs", "5"],
    );
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("size,M,K,kernel_ns,naive_ns"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.len(), 5);
        assert!(r[3].parse::<f64>().unwrap() > 0.0 && r[4].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn copy_task_reports_bit_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["copy-task", "--cell", "lstm", "--iterations", "20"]);
    assert!(out.starts_with("bit_error "));
}

#[test]
fn failures_are_one_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "blobs", "--n", "100", "--out", "d.ds"]);
    ok(d, &["synth", "tensor", "--cols", "3", "--out", "tiny.tensor"]);
    fails(d, &["train", "--data", "d.ds", "--no-such-flag", "--out", "x"], "usage", 2);
    fails(d, &["frobnicate"], "usage", 2);
    fails(d, &["quantize", "--bits", "9", "tiny.tensor", "o.q"], "usage", 2);
    std::fs::write(d.join("bad.json"), "{\"model\": {\"hidden\": \"wide\"}}").unwrap();
    fails(d, &["train", "--data", "d.ds", "--config", "bad.json", "--out", "x"], "usage", 2);
    fails(d, &["eval", "--model", "missing.ckpt", "--data", "d.ds"], "io", 1);
    fails(d, &["eval", "--model", "d.ds", "--data", "d.ds"], "format", 1);
    fails(d, &["quantize", "--bits", "2", "tiny.tensor", "o.q"], "precondition", 1);
    fails(
        d,
        &["train", "--data", "d.ds", "--lr", "1e308", "--epochs", "3", "--out", "x"],
        "diverged",
        1,
    );
    std::fs::write(d.join("garbage"), b"not a file").unwrap();
    fails(d, &["inspect", "garbage"], "format", 1);
}
