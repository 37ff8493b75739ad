use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cuedepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cuedepth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const CAMERA: &str = r#"
[dataset.generate.camera]
focal_px = 16.0
width_px = 16
height_px = 16
depth_range = [1.0, 10.0]
background_depth = 10.0
"#;

fn write_spec(dir: &Path) -> String {
    let text = format!(
        r#"
name = "tiny"
seeds = [0]
output = "{}"

[dataset.generate]
seed = 1
count = 6
preset = "familiar"
{CAMERA}
[net]
base_width = 4
n_bins = 8

[net.train]
epochs = 2
batch = 2
val_fraction = 0.34
"#,
        dir.join("runs").display()
    );
    let path = dir.join("spec.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nseeds = []\n").unwrap();
    let o = cuedepth(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let o = cuedepth(&["train", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    fs::write(&cfg, "seed = 2\ncount = 3\npreset = \"relative\"\n").unwrap();
    let out = dir.path().join("data");
    let o = cuedepth(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = cuedepth::scene::Dataset::load(&out).unwrap();
    assert_eq!(d.len(), 3);

    let o = cuedepth(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_rerun_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let o = cuedepth(&["train", "--config", &spec]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!o.stdout.is_empty());

    let o = cuedepth(&["train", "--config", &spec]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));

    let o = cuedepth(&["train", "--config", &spec, "--force"]);
    assert_eq!(code(&o), 0);

    let runs = dir.path().join("runs");
    let o = cuedepth(&["report", runs.to_str().unwrap(), "--plot"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(runs
        .join("tiny")
        .join(cuedepth::harness::PLOT_FILE)
        .exists());
}
