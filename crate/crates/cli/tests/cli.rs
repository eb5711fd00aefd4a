//! End-to-end runs of the `tipforce` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tipforce_cli::analyze::ReportBody;
use tipforce_cli::artifacts::Stamped;
use tipforce_cli::pipeline::Selection;
use tipforce_core::control::InsertionTrace;

const SMALL: &str = r#"
seed = 11
test_frames = 1000

[calibration]
n = 1200

[train]
epochs = 1
batch = 32
windows_per_epoch = 128
val_windows = 64

[cgru]
seq_len = 8

[resnet]
seq_len = 8

[auto]
insertions = 2

[collab]
operators = 1
alpha = 1.0
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tipforce"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "tipforce {args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn phantoms_generate_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "3", "phantom", "gen", "--out", "ph"]);
    let files: Vec<String> = std::fs::read_dir(d.join("ph"))
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.len(), 4);
    let mut args = vec!["phantom", "validate"];
    args.extend(files.iter().map(String::as_str));
    let stdout = ok(d, &args);
    assert_eq!(stdout.matches(": ok,").count(), 4);

    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert!(text.starts_with("# tipforce phantom version="));
    std::fs::write(d.join("broken.toml"), text.replace("end_mm", "finish_mm")).unwrap();
    let out = run(d, &["phantom", "validate", "broken.toml"]);
    assert!(!out.status.success());
}

#[test]
fn single_phantom_by_index_matches_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "gen", "--out", "all"]);
    ok(d, &["phantom", "gen", "--index", "2", "--out", "one"]);
    let one: Vec<_> = std::fs::read_dir(d.join("one")).unwrap().collect();
    assert_eq!(one.len(), 1);
    let p = one[0].as_ref().unwrap().path();
    let twin = d.join("all").join(p.file_name().unwrap());
    assert_eq!(
        std::fs::read_to_string(&p).unwrap(),
        std::fs::read_to_string(twin).unwrap()
    );
}

#[test]
fn calibrate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let cfg = cfg.to_str().unwrap();
    ok(
        d,
        &[
            "--config",
            cfg,
            "sensor",
            "calibrate",
            "--n",
            "1000",
            "--profile",
            "cyclic",
        ],
    );
    ok(
        d,
        &[
            "--config",
            cfg,
            "sensor",
            "calibrate",
            "--stream",
            "test",
            "--out",
            "data/t.bin",
        ],
    );
    assert!(d.join("data/calibration.bin").is_file());
    let stdout = ok(
        d,
        &[
            "--config",
            cfg,
            "neural",
            "train",
            "--arch",
            "cgru",
            "--data",
            "data/calibration.bin",
        ],
    );
    assert!(stdout.contains("validation MAE"));
    assert!(d.join("models/cgru.ckpt").is_file());
    assert!(d.join("models/cgru.history.json").is_file());
    ok(
        d,
        &[
            "--config",
            cfg,
            "neural",
            "eval",
            "--ckpt",
            "models/cgru.ckpt",
            "--data",
            "data/t.bin",
            "--report",
            "eval.json",
        ],
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(v["arch"], "cgru");
    assert_eq!(v["n_frames"], 1000);
    assert!(v["mae"].as_f64().unwrap().is_finite());
    assert_eq!(v["provenance"]["seed"], 11);
}

#[test]
fn runs_then_analyze_and_refuse_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let cfg = cfg.to_str().unwrap();
    ok(d, &["--config", cfg, "phantom", "gen", "--out", "ph"]);
    ok(
        d,
        &[
            "--config",
            cfg,
            "run",
            "auto",
            "--phantom",
            "ph",
            "--v",
            "5",
            "--n",
            "2",
            "--out",
            "tr",
        ],
    );
    ok(
        d,
        &[
            "--config",
            cfg,
            "run",
            "collab",
            "--phantom",
            "ph",
            "--alpha",
            "1",
            "--out",
            "tr",
        ],
    );
    let names: Vec<String> = std::fs::read_dir(d.join("tr"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("auto-")).count(), 2);
    assert_eq!(names.iter().filter(|n| n.starts_with("collab-")).count(), 4);
    assert!(names.contains(&"gains.json".to_string()));

    let stdout = ok(
        d,
        &[
            "--config",
            cfg,
            "analyze",
            "--traces",
            "tr",
            "--ground-truth",
            "ph",
            "--report",
            "rep/report.json",
            "--series",
            "rep/series",
        ],
    );
    assert!(!stdout.is_empty());
    let rep: Stamped<ReportBody> =
        serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    assert!(rep.body.warnings.is_empty());
    assert_eq!(rep.body.report.n_traces, 6);
    assert_eq!(rep.body.report.collab.as_ref().unwrap().n_traces, 4);
    assert!(d.join("rep/report.txt").is_file());
    assert_eq!(std::fs::read_dir(d.join("rep/series")).unwrap().count(), 6);

    // A trace recorded on a different phantom revision must not be analyzed silently.
    let path = d.join("tr/auto-000.csv");
    let mut t = InsertionTrace::load(&path).unwrap();
    t.meta.phantom_hash = "0000000000000000".into();
    t.save(&path).unwrap();
    let out = run(
        d,
        &[
            "--config",
            cfg,
            "analyze",
            "--traces",
            "tr",
            "--ground-truth",
            "ph",
            "--report",
            "x.json",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
    assert!(!d.join("x.json").exists());
    ok(
        d,
        &[
            "--config",
            cfg,
            "analyze",
            "--traces",
            "tr",
            "--ground-truth",
            "ph",
            "--report",
            "x.json",
            "--force",
        ],
    );
    let rep: Stamped<ReportBody> =
        serde_json::from_str(&std::fs::read_to_string(d.join("x.json")).unwrap()).unwrap();
    assert_eq!(rep.body.warnings.len(), 1);
}

#[test]
fn skip_train_without_checkpoints_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let out = run(
        d,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "pipeline",
            "--skip-train",
            "--out",
            "p",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage train failed"), "{err}");
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn small_pipeline_then_skip_train_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let cfg = cfg.to_str().unwrap();
    ok(d, &["--config", cfg, "pipeline", "--out", "p"]);
    for f in [
        "manifest.json",
        "timings.json",
        "report.json",
        "report.txt",
        "data/calibration.bin",
        "data/test.bin",
        "models/cgru.ckpt",
        "models/resnet.ckpt",
        "models/selection.json",
        "collab/gains.json",
    ] {
        assert!(d.join("p").join(f).is_file(), "missing {f}");
    }
    let sel: Stamped<Selection> =
        serde_json::from_str(&std::fs::read_to_string(d.join("p/models/selection.json")).unwrap())
            .unwrap();
    let best = sel
        .body
        .candidates
        .iter()
        .min_by(|a, b| a.val_mae.total_cmp(&b.val_mae))
        .unwrap();
    assert_eq!(sel.body.selected, best.arch);
    assert_eq!(
        sel.body
            .candidates
            .iter()
            .filter(|c| c.test.selected)
            .count(),
        1
    );

    let first = std::fs::read_to_string(d.join("p/report.json")).unwrap();
    let trace = std::fs::read(d.join("p/traces/collab-000.csv")).unwrap();
    ok(
        d,
        &["--config", cfg, "pipeline", "--skip-train", "--out", "p"],
    );
    assert_eq!(
        first,
        std::fs::read_to_string(d.join("p/report.json")).unwrap()
    );
    assert_eq!(
        trace,
        std::fs::read(d.join("p/traces/collab-000.csv")).unwrap()
    );
}
