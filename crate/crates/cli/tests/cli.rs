use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaitbreath"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset: 4 subjects, 2 walks per class.
fn small_dataset(root: &Path) -> PathBuf {
    let cfg = root.join("synth.json");
    fs::write(
        &cfg,
        r#"{"subjects": 4, "walks_per_class": 2, "duration": [12.0, 15.0], "seed": 11}"#,
    )
    .unwrap();
    let ds = root.join("ds");
    run_ok(&["synth", "--config", s(&cfg), "--out", s(&ds)]);
    ds
}

fn sorted_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn end_to_end_dataset_then_single_sample_prediction() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let runs = tmp.path().join("runs");
    run_ok(&["run", "--dataset", s(&ds), "--out", s(&runs)]);
    let model = runs.join("model.json");
    assert!(model.exists());

    let sample = ds.join("s01_deep_1");
    let one = tmp.path().join("one");
    run_ok(&["run", "--sample", s(&sample), "--out", s(&one), "--model", s(&model)]);
    let pred: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(one.join("prediction.json")).unwrap()).unwrap();
    assert!(pred["label"] == "deep" || pred["label"] == "normal");
    assert!(pred["margin"].as_f64().unwrap().is_finite());
    assert_eq!(pred["config_hash"].as_str().unwrap().len(), 16);
    for csv in ["channels.csv", "clean.csv", "denoised.csv", "selected.csv"] {
        let text = fs::read_to_string(one.join(csv)).unwrap();
        assert!(text.starts_with("# config_hash="), "{csv} lacks the hash line");
    }
}

#[test]
fn corrupt_depth_leaves_only_failure_report() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let bad = tmp.path().join("bad");
    fs::create_dir(&bad).unwrap();
    let src = ds.join("s01_deep_1");
    for f in ["meta.json", "joints.csv"] {
        fs::copy(src.join(f), bad.join(f)).unwrap();
    }
    fs::write(bad.join("depth.bin"), b"not a depth stream").unwrap();

    let out = tmp.path().join("out");
    let res = bin()
        .args(["run", "--sample", s(&bad), "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(4));
    assert_eq!(sorted_names(&out), vec!["failure.json"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("failure.json")).unwrap()).unwrap();
    assert_eq!(report["stage"], "extract");
    assert_eq!(report["kind"], "format");
}

#[test]
fn invalid_parameter_exit_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"gsa": {"mu": -1.0}}"#).unwrap();
    let res = bin()
        .args([
            "run",
            "--config",
            s(&cfg),
            "--sample",
            "nowhere",
            "--out",
            s(tmp.path()),
        ])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(5));

    let res = bin()
        .args(["denoise", "--in", "x", "--out", "y", "--window", "0"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(5));
}

#[test]
fn stop_after_denoise() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&[
        "run",
        "--sample",
        s(&ds.join("s02_normal_1")),
        "--out",
        s(&out),
        "--stop-after",
        "denoise",
    ]);
    assert_eq!(
        sorted_names(&out),
        vec!["channels.csv", "clean.csv", "denoised.csv", "trace.csv"]
    );
}

#[test]
fn subcommands_compose_to_run() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let sample = ds.join("s03_deep_2");
    let full = tmp.path().join("full");
    run_ok(&["run", "--sample", s(&sample), "--out", s(&full)]);

    let st = tmp.path().join("stages");
    fs::create_dir(&st).unwrap();
    let p = |f: &str| st.join(f).to_string_lossy().into_owned();
    run_ok(&["extract", "--sample", s(&sample), "--out", &p("channels.csv")]);
    run_ok(&["preprocess", "--in", &p("channels.csv"), "--out", &p("clean.csv")]);
    run_ok(&[
        "denoise",
        "--in",
        &p("clean.csv"),
        "--out",
        &p("denoised.csv"),
        "--trace",
        &p("trace.csv"),
    ]);
    run_ok(&[
        "select",
        "--in",
        &p("denoised.csv"),
        "--out",
        &p("selected.csv"),
        "--report",
        &p("indices.json"),
    ]);
    run_ok(&[
        "features",
        "--in",
        &p("selected.csv"),
        "--out",
        &p("features.json"),
        "--sample",
        s(&sample),
        "--report",
        &p("indices.json"),
    ]);

    assert_eq!(sorted_names(&full), sorted_names(&st));
    for f in sorted_names(&full) {
        assert_eq!(
            fs::read(full.join(&f)).unwrap(),
            fs::read(st.join(&f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn train_and_predict_subcommands() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let runs = tmp.path().join("runs");
    run_ok(&[
        "run",
        "--dataset",
        s(&ds),
        "--out",
        s(&runs),
        "--stop-after",
        "features",
    ]);
    assert!(!runs.join("model.json").exists());

    let model = tmp.path().join("model.json");
    run_ok(&[
        "train",
        "--features",
        s(&runs),
        "--labels",
        s(&ds),
        "--out",
        s(&model),
        "--C",
        "1.0",
        "--seed",
        "7",
    ]);
    let out = run_ok(&[
        "predict",
        "--model",
        s(&model),
        "--features",
        s(&runs.join("s01_deep_1/features.json")),
    ]);
    let pred: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(pred["id"], "s01_deep_1");

    // the dataset run trains the same model when no model is given
    let again = tmp.path().join("again");
    run_ok(&["run", "--dataset", s(&ds), "--out", s(&again)]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(again.join("model.json")).unwrap());
}

#[test]
fn bench_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let ds = small_dataset(tmp.path());
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    for out in [&a, &b] {
        run_ok(&[
            "bench",
            "--dataset",
            s(&ds),
            "--splits",
            "6",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 16);
}
