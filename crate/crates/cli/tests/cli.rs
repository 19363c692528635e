//! Runs the `rgbt` binary on small synthetic datasets.

use std::path::Path;
use std::process::{Command, Output};

use rgbt_core::dataset::{load_thermal_png, DatasetLayout};
use rgbt_core::synthetic::{group_location, sample_id, sample_timestamp, sample_weather};

fn rgbt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgbt"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rgbt(args, cwd);
    assert!(out.status.success(), "rgbt {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(cwd: &Path, samples: &str) {
    ok(&["synth", "--out", "raw", "--samples", samples, "--groups", "3", "--height", "40", "--width", "48"], cwd);
}

#[test]
fn ingest_is_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "6");
    ok(&["ingest", "--in", "raw", "--out", "data"], dir);
    let first = std::fs::read(dir.join("data/metadata.csv")).unwrap();
    ok(&["ingest", "--in", "raw", "--out", "data"], dir);
    assert_eq!(std::fs::read(dir.join("data/metadata.csv")).unwrap(), first);

    // an interrupted run left one image behind; the rerun fills the gap
    std::fs::remove_file(DatasetLayout::new(dir.join("data")).thermal_path(&sample_id(4))).unwrap();
    ok(&["ingest", "--in", "raw", "--out", "data"], dir);
    assert_eq!(std::fs::read(dir.join("data/metadata.csv")).unwrap(), first);
    load_thermal_png(&DatasetLayout::new(dir.join("data")).thermal_path(&sample_id(4))).unwrap();
}

#[test]
fn missing_thermal_names_the_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "4");
    std::fs::remove_file(DatasetLayout::new(dir.join("raw")).thermal_path(&sample_id(2))).unwrap();
    let out = rgbt(&["ingest", "--in", "raw", "--out", "data"], dir);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&sample_id(2)), "{stderr}");
}

#[test]
fn bad_arguments_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rgbt(&["train", "--no-such-flag"], tmp.path()).status.code(), Some(2));
    assert_eq!(rgbt(&["render", "--in", "x", "--out", "y", "--cmap", "rainbow"], tmp.path()).status.code(), Some(1));
    let version = ok(&["--version"], tmp.path());
    assert!(version.contains("layout_version=wx15-v1"), "{version}");
}

#[test]
fn train_then_infer_at_small_size() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "6");
    ok(&["ingest", "--in", "raw", "--out", "data"], dir);
    ok(&["preprocess", "--in", "data", "--out", "proc", "--size", "32"], dir);
    let config = "epochs = 1\nfinetune_epochs = 0\n[augment]\nhflip_p = 0.0\n";
    std::fs::write(dir.join("quick.toml"), config).unwrap();
    ok(
        &["train", "--data", "proc", "--run-dir", "run", "--config", "quick.toml", "--folds", "3", "--fold", "2"],
        dir,
    );
    assert!(dir.join("run/run.json").is_file());
    assert!(dir.join("run/fold2/history.csv").is_file());

    let (lat, lon) = group_location(0);
    let record = sample_weather(0).into_record(lat, lon, sample_timestamp(0));
    std::fs::write(dir.join("meta.json"), serde_json::to_string(&record).unwrap()).unwrap();
    let rgb = format!("raw/rgb/{}.png", sample_id(0));
    ok(
        &["infer", "--checkpoint", "run/fold2/model.safetensors", "--rgb", &rgb, "--meta", "meta.json", "--out", "."],
        dir,
    );
    let pred = load_thermal_png(&dir.join(format!("{}_thermal.png", sample_id(0)))).unwrap();
    assert_eq!((pred.height(), pred.width()), (32, 32));
    assert!(dir.join(format!("{}_render.png", sample_id(0))).is_file());
}
