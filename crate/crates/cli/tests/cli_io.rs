//! End-to-end checks of the binary: exit codes, file formats, determinism.

use std::path::Path;
use std::process::Command;

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stemgnn"))
}

fn write_config(path: &Path, dataset: &Path, out_dir: &Path, extra: &str) {
    let text = format!(
        "dataset = {}\noutput_dir = {}\nwindow = 6\nepochs = 2\nbatch_size = 16\n\
         channels = 3\nbasis_count = 4\nattention_dim = 4\ngru_hidden = 4\nseed = 5\n{extra}",
        dataset.display(),
        out_dir.display()
    );
    std::fs::write(path, text).unwrap();
}

#[test]
fn unknown_command_and_missing_args_exit_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // eval without a checkpoint is a usage error
    let out = bin().args(["eval", "--config", "/nonexistent.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &dir.path().join("nope.csv"), &dir.path().join("out"), "");
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for target in [&a, &b] {
        let out = bin()
            .args(["synth", "--nodes", "4", "--steps", "120", "--seed", "9", "--out"])
            .arg(target)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a_adjacency.csv")).unwrap(),
        std::fs::read(dir.path().join("b_adjacency.csv")).unwrap()
    );
}

#[test]
fn train_eval_forecast_roundtrip() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("series.csv");
    let out_dir = dir.path().join("out");
    let status = bin()
        .args(["synth", "--nodes", "4", "--steps", "120", "--seed", "3", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &data, &out_dir, "");
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("model.ckpt").exists());
    assert!(out_dir.join("resume.ckpt").exists());
    let log = std::fs::read_to_string(out_dir.join("training_log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,train_loss,val_mae,seconds\n"));
    assert_eq!(log.lines().count(), 3, "header plus one row per epoch");

    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(out_dir.join("model.ckpt"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"averaged\""));
    assert!(report.contains("config_fingerprint"));
    assert!(out_dir.join("predictions.csv").exists());

    let out = bin()
        .args(["forecast", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(out_dir.join("model.ckpt"))
        .args(["--horizon", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let forecast = std::fs::read_to_string(out_dir.join("forecast.csv")).unwrap();
    assert_eq!(forecast.lines().count(), 6, "header plus five steps");

    for export in ["export-graph", "export-spectral"] {
        let out = bin()
            .args([export, "--config"])
            .arg(&cfg)
            .args(["--checkpoint"])
            .arg(out_dir.join("model.ckpt"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{export}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let spectral = std::fs::read_to_string(out_dir.join("spectral.csv")).unwrap();
    assert_eq!(spectral.lines().next().unwrap(), "gft_1,gft_2,cell_1,cell_2");
}

#[test]
fn truncated_checkpoint_is_an_integrity_error() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("series.csv");
    let out_dir = dir.path().join("out");
    bin()
        .args(["synth", "--nodes", "4", "--steps", "120", "--seed", "4", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &data, &out_dir, "");
    assert!(bin().args(["train", "--config"]).arg(&cfg).status().unwrap().success());

    let ckpt = out_dir.join("model.ckpt");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
    std::fs::write(&ckpt, cut).unwrap();
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablate_emits_the_seven_variant_rows() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("series.csv");
    let out_dir = dir.path().join("out");
    bin()
        .args(["synth", "--nodes", "4", "--steps", "120", "--seed", "6", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    let cfg = dir.path().join("run.cfg");
    let adjacency = format!("adjacency = {}\n", dir.path().join("series_adjacency.csv").display());
    write_config(&cfg, &data, &out_dir, &adjacency);
    let out = bin().args(["ablate", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        labels,
        vec![
            "StemGNN",
            "w/o LC",
            "w/o Spe-Seq Cell",
            "w/o DFT",
            "w/o GFT",
            "w/o Residual",
            "w/o Backcasting"
        ]
    );

    // omitting the adjacency makes the fixed-graph variant impossible
    write_config(&cfg, &data, &out_dir, "");
    let out = bin().args(["ablate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn covid_shaped_fixture_loads_with_the_documented_dimensions() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/covid_like_25x110.csv");
    let ds = stemgnn_cli::data::load_csv(&fixture).unwrap();
    assert_eq!(ds.nodes(), 25);
    assert_eq!(ds.len(), 110);
}
